//! Zero-shot evaluation: per-frame EPE/D1 records and weather-subset aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, KNOWN_SUBSETS};
use crate::error::{CoreError, Result};
use crate::metrics::{frame_stats, D1Mode, FrameStats};
use crate::pfm::read_pfm;
use crate::sample::StereoSample;

/// Anything that can produce a full-resolution left disparity map for a sample.
pub trait DisparityPredictor: Sync {
    fn predict_disparity(&self, sample: &StereoSample) -> Result<Array2<f32>>;
}

/// Predictions stored as `<dir>/<id>.pfm`.
#[derive(Debug, Clone)]
pub struct PredictionDir {
    pub dir: PathBuf,
}

impl PredictionDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PredictionDir { dir: dir.into() }
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.pfm"))
    }
}

impl DisparityPredictor for PredictionDir {
    fn predict_disparity(&self, sample: &StereoSample) -> Result<Array2<f32>> {
        read_pfm(self.path_for(&sample.id)).map(|(d, _)| d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: String,
    pub subset: String,
    pub epe: f64,
    pub d1: f64,
    pub valid_count: usize,
}

impl MetricRecord {
    pub fn from_stats(id: &str, subset: &str, stats: &FrameStats) -> Self {
        MetricRecord {
            id: id.to_string(),
            subset: subset.to_string(),
            epe: stats.epe(),
            d1: stats.d1(),
            valid_count: stats.valid_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub records: Vec<MetricRecord>,
    pub failures: Vec<EvalFailure>,
}

/// Evaluates every manifest entry. Frames that cannot be loaded, lack a
/// prediction, or have an empty valid mask are listed as failures and left
/// out of the records.
pub fn evaluate<P: DisparityPredictor + ?Sized>(
    predictor: &P,
    manifest: &DatasetManifest,
    mode: D1Mode,
) -> EvalOutcome {
    let results: Vec<std::result::Result<MetricRecord, EvalFailure>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let run = || -> Result<MetricRecord> {
                let sample = StereoSample::load(entry)?;
                let pred = predictor.predict_disparity(&sample)?;
                let stats = frame_stats(
                    pred.view(),
                    sample.disparity.view(),
                    sample.valid_mask.view(),
                    mode,
                )?;
                Ok(MetricRecord::from_stats(&entry.id, &entry.subset, &stats))
            };
            run().map_err(|e| {
                log::warn!("excluding frame {}: {e}", entry.id);
                EvalFailure {
                    id: entry.id.clone(),
                    reason: e.to_string(),
                }
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    EvalOutcome { records, failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every valid pixel counts once (pooled).
    #[default]
    Pixel,
    /// Every frame counts once.
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: String,
    pub epe: f64,
    pub d1: f64,
    pub frames: usize,
    pub valid_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub weighting: Weighting,
    pub subsets: Vec<SubsetRow>,
    pub overall: SubsetRow,
}

#[derive(Default)]
struct Acc {
    epe: f64,
    d1: f64,
    weight: f64,
    frames: usize,
    valid: usize,
}

impl Acc {
    fn add(&mut self, r: &MetricRecord, weighting: Weighting) {
        let w = match weighting {
            Weighting::Pixel => r.valid_count as f64,
            Weighting::Frame => 1.0,
        };
        self.epe += w * r.epe;
        self.d1 += w * r.d1;
        self.weight += w;
        self.frames += 1;
        self.valid += r.valid_count;
    }

    fn row(&self, subset: &str) -> SubsetRow {
        SubsetRow {
            subset: subset.to_string(),
            epe: self.epe / self.weight,
            d1: self.d1 / self.weight,
            frames: self.frames,
            valid_count: self.valid,
        }
    }
}

fn subset_rank(label: &str) -> (usize, &str) {
    let rank = KNOWN_SUBSETS
        .iter()
        .position(|k| *k == label)
        .unwrap_or(KNOWN_SUBSETS.len());
    (rank, label)
}

/// Weighted means per subset plus an overall row. Records are folded in id order.
pub fn aggregate(records: &[MetricRecord], weighting: Weighting) -> Result<SubsetReport> {
    if records.is_empty() {
        return Err(CoreError::Argument("cannot aggregate zero records".into()));
    }
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut per_subset: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut overall = Acc::default();
    for r in sorted {
        per_subset.entry(r.subset.as_str()).or_default().add(r, weighting);
        overall.add(r, weighting);
    }
    let mut subsets: Vec<SubsetRow> = per_subset.iter().map(|(s, a)| a.row(s)).collect();
    subsets.sort_by(|a, b| subset_rank(&a.subset).cmp(&subset_rank(&b.subset)));
    Ok(SubsetReport {
        weighting,
        subsets,
        overall: overall.row("Overall"),
    })
}

impl SubsetReport {
    /// Aligned text table with one EPE/D1 column pair per subset and a final Overall pair.
    pub fn to_table(&self) -> String {
        let cols: Vec<&SubsetRow> = self.subsets.iter().chain(std::iter::once(&self.overall)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for c in &cols {
            let _ = write!(out, " | {:^17}", c.subset);
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "");
        for _ in &cols {
            let _ = write!(out, " | {:>8} {:>8}", "EPE", "D1");
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "result");
        for c in &cols {
            let _ = write!(out, " | {:>8.3} {:>8.3}", c.epe, c.d1);
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", "frames");
        for c in &cols {
            let _ = write!(out, " | {:>17}", c.frames);
        }
        out.push('\n');
        out
    }
}

/// Machine-readable evaluation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub d1_mode: D1Mode,
    pub report: Option<SubsetReport>,
    pub records: Vec<MetricRecord>,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn build(outcome: EvalOutcome, mode: D1Mode, weighting: Weighting) -> Self {
        let report = aggregate(&outcome.records, weighting).ok();
        EvalReport {
            d1_mode: mode,
            report,
            records: outcome.records,
            failures: outcome.failures,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CoreError::Json {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
    }
}
