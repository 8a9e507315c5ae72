//! Per-frame disparity metrics.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Absolute outlier threshold in pixels.
pub const D1_ABS_THRESHOLD: f64 = 3.0;
/// Relative outlier threshold as a fraction of the true disparity.
pub const D1_REL_THRESHOLD: f64 = 0.05;

/// How the absolute and relative D1 thresholds combine.
///
/// `And` is the KITTI convention: a pixel is an outlier only when its error
/// exceeds both 3 px and 5 % of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum D1Mode {
    #[default]
    And,
    Or,
}

impl std::str::FromStr for D1Mode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "and" => Ok(D1Mode::And),
            "or" => Ok(D1Mode::Or),
            other => Err(CoreError::Argument(format!(
                "d1 mode must be \"and\" or \"or\", got {other:?}"
            ))),
        }
    }
}

pub fn is_outlier(err: f64, gt: f64, mode: D1Mode) -> bool {
    let abs = err > D1_ABS_THRESHOLD;
    let rel = err > D1_REL_THRESHOLD * gt;
    match mode {
        D1Mode::And => abs && rel,
        D1Mode::Or => abs || rel,
    }
}

/// Sufficient statistics of one frame; pooling these across frames gives exact pixel-weighted aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameStats {
    pub abs_err_sum: f64,
    pub outliers: usize,
    pub valid_count: usize,
}

impl FrameStats {
    pub fn epe(&self) -> f64 {
        self.abs_err_sum / self.valid_count as f64
    }

    pub fn d1(&self) -> f64 {
        100.0 * self.outliers as f64 / self.valid_count as f64
    }
}

pub fn frame_stats(
    pred: ArrayView2<f32>,
    gt: ArrayView2<f32>,
    valid: ArrayView2<bool>,
    mode: D1Mode,
) -> Result<FrameStats> {
    if pred.dim() != gt.dim() || gt.dim() != valid.dim() {
        return Err(CoreError::Shape(format!(
            "prediction {:?}, ground truth {:?} and mask {:?} must match",
            pred.dim(),
            gt.dim(),
            valid.dim()
        )));
    }
    let mut stats = FrameStats::default();
    for ((&p, &g), &m) in pred.iter().zip(gt.iter()).zip(valid.iter()) {
        if !m {
            continue;
        }
        if !p.is_finite() {
            return Err(CoreError::Validation(format!(
                "non-finite prediction {p} at a valid pixel"
            )));
        }
        let err = (p as f64 - g as f64).abs();
        stats.abs_err_sum += err;
        stats.outliers += usize::from(is_outlier(err, g as f64, mode));
        stats.valid_count += 1;
    }
    if stats.valid_count == 0 {
        return Err(CoreError::Validation("valid mask is empty".into()));
    }
    Ok(stats)
}

/// Mean absolute disparity error over valid pixels.
pub fn epe(pred: ArrayView2<f32>, gt: ArrayView2<f32>, valid: ArrayView2<bool>) -> Result<f64> {
    frame_stats(pred, gt, valid, D1Mode::And).map(|s| s.epe())
}

/// Percentage of valid pixels that are outliers under `mode`.
pub fn d1(
    pred: ArrayView2<f32>,
    gt: ArrayView2<f32>,
    valid: ArrayView2<bool>,
    mode: D1Mode,
) -> Result<f64> {
    frame_stats(pred, gt, valid, mode).map(|s| s.d1())
}
