//! Per-sample generation and the dataset-level pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stereo_core::image::encode_rgb_png;
use stereo_core::{DatasetEntry, DatasetManifest, EntryFiles, SplitWriter, StereoSample};
use stereo_dfm::{DfmHook, NoHook};

use crate::config::{Backends, GenerationConfig};
use crate::depth::{predict_depth, DepthCondition};
use crate::diffusion::{DiffusionBackend, GenerationRequest};
use crate::error::{BackendError, DatagenError, Result};
use crate::prompt::{build_weather_prompt, PromptSource, WeatherCondition, WeatherPrompt};

pub const REPORT_FILE: &str = "report.json";

/// Stable per-item seed: the first 8 bytes of SHA-256 over (seed, id, condition).
pub fn sample_seed(seed: u64, sample_id: &str, condition: WeatherCondition) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    h.update([0u8]);
    h.update(condition.as_str().as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Name of a generated entry.
pub fn output_id(sample_id: &str, condition: WeatherCondition) -> String {
    format!("{sample_id}_{condition}")
}

#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub left: Array3<f32>,
    pub right: Array3<f32>,
    /// Hook calls at selected sites; `None` when no in-process hook was installed.
    pub hook_invocations: Option<usize>,
}

/// Generates both views jointly. Installs the fusion hook when `cfg.dfm` is set
/// and the backend exposes attention sites.
pub fn generate_pair(
    sample: &StereoSample,
    prompt: &WeatherPrompt,
    depth: &DepthCondition,
    cfg: &GenerationConfig,
    backend: &dyn DiffusionBackend,
    seed: u64,
) -> Result<GeneratedPair, BackendError> {
    let request = GenerationRequest {
        left: sample.left.view(),
        right: sample.right.view(),
        depth,
        prompt,
        steps: cfg.steps,
        guidance_scale: cfg.guidance_scale,
        conditioning_scale: cfg.conditioning_scale,
        seed,
        dfm: cfg.dfm.as_ref(),
    };
    let sites = backend.sites();
    let ([left, right], hook_invocations) = match &cfg.dfm {
        Some(settings) if !sites.is_empty() => {
            let mut hook = DfmHook::install(&sites, settings.clone())?;
            hook.set_depth(depth.left.clone(), depth.right.clone());
            let views = backend.generate(&request, &mut hook)?;
            (views, Some(hook.invocations()))
        }
        _ => (backend.generate(&request, &mut NoHook)?, None),
    };
    let want = sample.left.dim();
    for (name, img) in [("left", &left), ("right", &right)] {
        if img.dim() != want {
            return Err(BackendError::Response(format!(
                "{name} view came back as {:?}, source is {want:?}",
                img.dim()
            )));
        }
        if img.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Response(format!("{name} view is not finite")));
        }
    }
    Ok(GeneratedPair {
        left,
        right,
        hook_invocations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub id: String,
    pub source_id: String,
    pub condition: WeatherCondition,
    pub seed: u64,
    pub prompt: String,
    pub prompt_source: PromptSource,
    pub hook_invocations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub source_id: String,
    pub condition: WeatherCondition,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub split: String,
    pub conditions: Vec<WeatherCondition>,
    pub requested: usize,
    pub generated: usize,
    pub skipped_count: usize,
    pub items: Vec<GeneratedItem>,
    pub skipped: Vec<SkippedItem>,
    pub config: GenerationConfig,
}

impl GenerationReport {
    fn empty(split: &str, conditions: &[WeatherCondition], cfg: &GenerationConfig) -> Self {
        GenerationReport {
            split: split.to_string(),
            conditions: conditions.to_vec(),
            requested: 0,
            generated: 0,
            skipped_count: 0,
            items: Vec::new(),
            skipped: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| DatagenError::Config(format!("cannot serialize report: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| DatagenError::Unwritable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

fn unwritable(path: &Path, e: impl ToString) -> DatagenError {
    DatagenError::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Creates `root` if needed and proves a file can be written into it.
pub fn ensure_writable(root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| unwritable(root, e))?;
    let probe = root.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| unwritable(root, e))?;
    fs::remove_file(&probe).map_err(|e| unwritable(root, e))
}

enum Outcome {
    Done(GeneratedItem),
    Skipped(SkippedItem),
}

fn skip_all(entry: &DatasetEntry, conditions: &[WeatherCondition], reason: String) -> Vec<Outcome> {
    log::warn!("skipping {}: {reason}", entry.id);
    conditions
        .iter()
        .map(|&condition| {
            Outcome::Skipped(SkippedItem {
                source_id: entry.id.clone(),
                condition,
                reason: reason.clone(),
            })
        })
        .collect()
}

fn process_entry(
    entry: &DatasetEntry,
    conditions: &[WeatherCondition],
    cfg: &GenerationConfig,
    backends: &Backends,
    writer: &SplitWriter,
) -> Vec<Outcome> {
    let sample = match StereoSample::load(entry) {
        Ok(s) => s,
        Err(e) => return skip_all(entry, conditions, format!("unreadable sample: {e}")),
    };
    // ground truth is copied byte for byte, never re-encoded
    let disparity = match fs::read(&entry.disparity) {
        Ok(b) => b,
        Err(e) => return skip_all(entry, conditions, format!("unreadable disparity: {e}")),
    };
    let mask = match entry.mask.as_ref().map(fs::read).transpose() {
        Ok(m) => m,
        Err(e) => return skip_all(entry, conditions, format!("unreadable mask: {e}")),
    };
    let depth = match predict_depth(&sample, backends.depth.as_ref()) {
        Ok(d) => d,
        Err(e) => return skip_all(entry, conditions, format!("depth prediction failed: {e}")),
    };

    conditions
        .iter()
        .map(|&condition| {
            let id = output_id(&entry.id, condition);
            let seed = sample_seed(cfg.seed, &entry.id, condition);
            let prompt = build_weather_prompt(&entry.id, condition, backends.prompt.as_ref());
            let result = generate_pair(&sample, &prompt, &depth, cfg, backends.diffusion.as_ref(), seed)
                .map_err(DatagenError::from)
                .and_then(|pair| {
                    let files = EntryFiles {
                        id: id.clone(),
                        left_png: encode_rgb_png(pair.left.view())?,
                        right_png: encode_rgb_png(pair.right.view())?,
                        disparity_pfm: disparity.clone(),
                        mask_png: mask.clone(),
                    };
                    writer.write_entry(&files)?;
                    Ok(pair.hook_invocations)
                });
            match result {
                Ok(hook_invocations) => Outcome::Done(GeneratedItem {
                    id,
                    source_id: entry.id.clone(),
                    condition,
                    seed,
                    prompt: prompt.text(),
                    prompt_source: prompt.source,
                    hook_invocations,
                }),
                Err(e) => {
                    log::warn!("skipping {id}: {e}");
                    Outcome::Skipped(SkippedItem {
                        source_id: entry.id.clone(),
                        condition,
                        reason: e.to_string(),
                    })
                }
            }
        })
        .collect()
}

/// Generates every (sample, condition) pair of `manifest` into
/// `<out_root>/<split>` and writes `<out_root>/report.json`.
///
/// Failures of single items are recorded in the report and never abort the
/// run. An empty manifest writes nothing.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    conditions: &[WeatherCondition],
    cfg: &GenerationConfig,
    backends: &Backends,
    out_root: &Path,
) -> Result<GenerationReport> {
    cfg.validate()?;
    if conditions.is_empty() {
        return Err(DatagenError::Config("no weather conditions given".into()));
    }
    for (i, c) in conditions.iter().enumerate() {
        if conditions[..i].contains(c) {
            return Err(DatagenError::Config(format!("condition {c} listed twice")));
        }
    }
    ensure_writable(out_root)?;
    if manifest.is_empty() {
        return Ok(GenerationReport::empty(&manifest.split, conditions, cfg));
    }

    let writer = SplitWriter::create(out_root, &manifest.split)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| DatagenError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| process_entry(entry, conditions, cfg, backends, &writer))
            .collect()
    });

    let mut report = GenerationReport::empty(&manifest.split, conditions, cfg);
    report.requested = manifest.len() * conditions.len();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Outcome::Done(item) => report.items.push(item),
            Outcome::Skipped(s) => report.skipped.push(s),
        }
    }
    report.items.sort_by(|a, b| a.id.cmp(&b.id));
    report
        .skipped
        .sort_by(|a, b| (&a.source_id, a.condition).cmp(&(&b.source_id, b.condition)));
    report.generated = report.items.len();
    report.skipped_count = report.skipped.len();

    let subsets: BTreeMap<String, String> = report
        .items
        .iter()
        .map(|i| (i.id.clone(), i.condition.to_string()))
        .collect();
    writer.write_subsets(&subsets)?;
    report.write(&report_path(out_root))?;
    Ok(report)
}

pub fn report_path(out_root: &Path) -> PathBuf {
    out_root.join(REPORT_FILE)
}
