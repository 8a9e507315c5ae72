//! Token fusion (`merge`) and its inverse broadcast (`unmerge`).
//!
//! Merged layout: all destination (right-view) tokens in index order, each
//! replaced by the mean of itself and every source token linked to it,
//! followed by the unmatched source (left-view) tokens in index order.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{DfmError, Result};
use crate::matching::MatchMap;

fn check_against(e: &MatchMap, n_src: usize, n_dst: usize) -> Result<()> {
    if e.n_src != n_src || e.n_dst != n_dst {
        return Err(DfmError::Argument(format!(
            "match map built for {}x{} tokens, patches have {n_src}x{n_dst}",
            e.n_src, e.n_dst
        )));
    }
    e.validate()
}

/// Fuses matched pairs; output has `2N - n` rows.
pub fn merge(patches: ArrayView3<f32>, e: &MatchMap) -> Result<Array2<f32>> {
    let (views, n, c) = patches.dim();
    if views != 2 {
        return Err(DfmError::Argument(format!("expected 2 views, got {views}")));
    }
    check_against(e, n, n)?;

    let mut sums: Vec<Vec<f64>> = (0..n)
        .map(|j| patches.slice(ndarray::s![1, j, ..]).iter().map(|&v| v as f64).collect())
        .collect();
    let mut counts = vec![1u32; n];
    for p in &e.pairs {
        for (acc, &v) in sums[p.dst].iter_mut().zip(patches.slice(ndarray::s![0, p.src, ..])) {
            *acc += v as f64;
        }
        counts[p.dst] += 1;
    }

    let targets = e.src_targets();
    let unmatched: Vec<usize> = (0..n).filter(|&i| targets[i].is_none()).collect();
    let mut out = Array2::<f32>::zeros((2 * n - e.n(), c));
    for j in 0..n {
        if counts[j] == 1 {
            out.row_mut(j).assign(&patches.slice(ndarray::s![1, j, ..]));
        } else {
            let k = counts[j] as f64;
            for (o, s) in out.row_mut(j).iter_mut().zip(&sums[j]) {
                *o = (s / k) as f32;
            }
        }
    }
    for (r, &i) in unmatched.iter().enumerate() {
        out.row_mut(n + r).assign(&patches.slice(ndarray::s![0, i, ..]));
    }
    Ok(out)
}

/// Restores `[2, N, C]`: each fused row goes back to its destination and every linked source.
pub fn unmerge(merged: ArrayView2<f32>, e: &MatchMap) -> Result<Array3<f32>> {
    if e.n_src != e.n_dst {
        return Err(DfmError::Argument(format!(
            "views must hold equal token counts, got {} and {}",
            e.n_src, e.n_dst
        )));
    }
    e.validate()?;
    let n = e.n_src;
    let (rows, c) = merged.dim();
    if rows != 2 * n - e.n() {
        return Err(DfmError::Argument(format!(
            "merged sequence has {rows} tokens, expected {}",
            2 * n - e.n()
        )));
    }
    let mut out = Array3::<f32>::zeros((2, n, c));
    for j in 0..n {
        out.slice_mut(ndarray::s![1, j, ..]).assign(&merged.row(j));
    }
    let mut next_unmatched = n;
    for (i, target) in e.src_targets().into_iter().enumerate() {
        let row = match target {
            Some(j) => j,
            None => {
                next_unmatched += 1;
                next_unmatched - 1
            }
        };
        out.slice_mut(ndarray::s![0, i, ..]).assign(&merged.row(row));
    }
    Ok(out)
}
