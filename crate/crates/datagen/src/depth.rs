//! Per-view depth conditioning.

use ndarray::{Array2, ArrayView3};
use stereo_core::image::luminance;
use stereo_core::StereoSample;

use crate::error::BackendError;

/// Normalized inverse depth per view, `[H, W]` in `[0, 1]`, near = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCondition {
    pub left: Array2<f32>,
    pub right: Array2<f32>,
}

impl DepthCondition {
    pub fn new(left: Array2<f32>, right: Array2<f32>) -> Result<Self, BackendError> {
        for (name, m) in [("left", &left), ("right", &right)] {
            if m.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(BackendError::Response(format!("{name} depth leaves [0, 1]")));
            }
        }
        if left.dim() != right.dim() {
            return Err(BackendError::Response("depth maps differ in size".into()));
        }
        Ok(DepthCondition { left, right })
    }
}

/// Monocular depth predictor. Returns an unnormalized inverse-depth-like map at image resolution.
pub trait DepthBackend: Send + Sync {
    fn predict(&self, image: ArrayView3<f32>) -> Result<Array2<f32>, BackendError>;
}

/// Mock: image luminance stands in for inverse depth.
#[derive(Debug, Clone, Copy, Default)]
pub struct LuminanceDepthBackend;

impl DepthBackend for LuminanceDepthBackend {
    fn predict(&self, image: ArrayView3<f32>) -> Result<Array2<f32>, BackendError> {
        Ok(luminance(image))
    }
}

/// Min-max normalization to `[0, 1]`; a constant map becomes 0.5.
pub fn normalize_depth(raw: &Array2<f32>) -> Result<Array2<f32>, BackendError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(BackendError::Response("depth map is not finite".into()));
    }
    let (lo, hi) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if raw.is_empty() || hi <= lo {
        return Ok(Array2::from_elem(raw.dim(), 0.5));
    }
    let span = hi - lo;
    Ok(raw.mapv(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

pub fn predict_depth(sample: &StereoSample, backend: &dyn DepthBackend) -> Result<DepthCondition, BackendError> {
    let mut maps = Vec::with_capacity(2);
    for img in [&sample.left, &sample.right] {
        let raw = backend.predict(img.view())?;
        if raw.dim() != (sample.height(), sample.width()) {
            return Err(BackendError::Response(format!(
                "depth map {:?} does not match image {}x{}",
                raw.dim(),
                sample.height(),
                sample.width()
            )));
        }
        maps.push(normalize_depth(&raw)?);
    }
    let right = maps.pop().expect("two views");
    let left = maps.pop().expect("two views");
    DepthCondition::new(left, right)
}
