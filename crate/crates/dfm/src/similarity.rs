use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};

/// Weighting between disparity agreement and feature (cosine) similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Weight of the disparity term; `1 - alpha` weighs the feature term.
    pub alpha: f64,
    /// Disparity difference at which disparity agreement reaches zero.
    pub d_max: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha: 0.5,
            d_max: 192.0,
        }
    }
}

impl SimilarityConfig {
    pub fn new(alpha: f64, d_max: f64) -> Result<Self> {
        let cfg = SimilarityConfig { alpha, d_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DfmError::Argument(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(DfmError::Argument(format!("d_max must be positive, got {}", self.d_max)));
        }
        Ok(())
    }

    /// The same weighting for tokens living on a grid downsampled by `scale`.
    pub fn at_scale(&self, scale: u32) -> Self {
        SimilarityConfig {
            alpha: self.alpha,
            d_max: self.d_max / scale as f64,
        }
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn squared_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Cosine from a dot product and squared norms; zero when either vector has no direction.
pub(crate) fn cosine(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        return 0.0;
    }
    (dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
}

pub(crate) fn disparity_agreement(d_src: f32, d_dst: f32, d_max: f64) -> f64 {
    (1.0 - (d_src as f64 - d_dst as f64).abs() / d_max).clamp(0.0, 1.0)
}

pub(crate) fn combine(feature: f64, disparity: f64, alpha: f64) -> f64 {
    feature + alpha * (disparity - feature)
}

/// `alpha * disparity_agreement + (1 - alpha) * cosine`, in `[-1, 1]`.
pub fn patch_similarity(
    src: (&[f32], f32),
    dst: (&[f32], f32),
    cfg: &SimilarityConfig,
) -> f64 {
    let feature = cosine(dot(src.0, dst.0), squared_norm(src.0), squared_norm(dst.0));
    combine(feature, disparity_agreement(src.1, dst.1, cfg.d_max), cfg.alpha)
}
