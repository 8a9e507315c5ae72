//! Feature statistics and principal-component images for visual inspection.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array3, ArrayView3};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleStats {
    pub scale: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of total channel variance captured by the first three components.
    pub top3_variance: f64,
}

pub fn scale_stats(scale: usize, f: ArrayView3<f32>) -> ScaleStats {
    let (c, h, w) = f.dim();
    let n = f.len().max(1) as f64;
    let mean = f.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let (min, max) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let eig = principal_axes(f);
    let total: f64 = eig.iter().map(|(l, _)| l.max(0.0)).sum();
    let top: f64 = eig.iter().take(3).map(|(l, _)| l.max(0.0)).sum();
    ScaleStats {
        scale,
        channels: c,
        height: h,
        width: w,
        mean,
        std: var.sqrt(),
        min,
        max,
        top3_variance: if total > 0.0 { top / total } else { 0.0 },
    }
}

/// Eigenpairs of the channel covariance, largest first; each vector's largest entry is positive.
fn principal_axes(f: ArrayView3<f32>) -> Vec<(f64, Vec<f64>)> {
    let (c, h, w) = f.dim();
    let n = h * w;
    if c == 0 || n == 0 {
        return Vec::new();
    }
    let x = DMatrix::from_fn(n, c, |i, k| f[[k, i / w, i % w]] as f64);
    let means = x.row_mean();
    let centered = DMatrix::from_fn(n, c, |i, k| x[(i, k)] - means[k]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..c)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Projects `[C, h, w]` features on their first three principal components,
/// each min-max scaled to `[0, 1]` (constant components map to 0.5).
pub fn pca_rgb(f: ArrayView3<f32>) -> Array3<f32> {
    let (c, h, w) = f.dim();
    let axes = principal_axes(f);
    let mut out = Array3::<f32>::from_elem((3, h, w), 0.5);
    let mean: Vec<f64> = (0..c)
        .map(|k| f.index_axis(ndarray::Axis(0), k).iter().map(|&v| v as f64).sum::<f64>() / (h * w).max(1) as f64)
        .collect();
    for (ch, (_, axis)) in axes.iter().take(3).enumerate() {
        let proj: Vec<f64> = (0..h * w)
            .map(|i| (0..c).map(|k| (f[[k, i / w, i % w]] as f64 - mean[k]) * axis[k]).sum())
            .collect();
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo > 1e-12 {
            for (i, v) in proj.iter().enumerate() {
                out[[ch, i / w, i % w]] = ((v - lo) / (hi - lo)) as f32;
            }
        }
    }
    out
}
