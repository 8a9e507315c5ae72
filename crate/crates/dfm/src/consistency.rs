use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{DfmError, Result};
use crate::fusion::{merge, unmerge};
use crate::matching::match_top_n;
use crate::patches::{partition, PatchSet};
use crate::similarity::SimilarityConfig;

/// A token-sequence transformer: `[L, C]` in, `[L, C]` out.
pub trait TokenAttention {
    fn attend(&self, tokens: ArrayView2<f32>) -> Array2<f32>;
}

impl<F> TokenAttention for F
where
    F: Fn(ArrayView2<f32>) -> Array2<f32>,
{
    fn attend(&self, tokens: ArrayView2<f32>) -> Array2<f32> {
        self(tokens)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAttention;

impl TokenAttention for IdentityAttention {
    fn attend(&self, tokens: ArrayView2<f32>) -> Array2<f32> {
        tokens.to_owned()
    }
}

pub(crate) fn checked_attend(attn: &dyn TokenAttention, tokens: ArrayView2<f32>) -> Result<Array2<f32>> {
    let out = attn.attend(tokens);
    if out.dim() != tokens.dim() {
        return Err(DfmError::Contract(format!(
            "attention mapped {:?} tokens to {:?}",
            tokens.dim(),
            out.dim()
        )));
    }
    Ok(out)
}

/// Runs `attn` on each view separately, as a backend without fusion would.
pub fn attend_per_view(patches: &PatchSet, attn: &dyn TokenAttention) -> Result<PatchSet> {
    let mut data = Array3::<f32>::zeros(patches.data().dim());
    for v in 0..2 {
        let out = checked_attend(attn, patches.view_tokens(v))?;
        data.index_axis_mut(Axis(0), v).assign(&out);
    }
    patches.with_data(data)
}

/// Match left→right, fuse the `n` strongest pairs, attend over the fused
/// sequence and scatter the result back to both views.
///
/// Every matched left token ends up identical to its right partner.
pub fn apply_consistency(
    patches: &PatchSet,
    n: usize,
    cfg: &SimilarityConfig,
    attn: &dyn TokenAttention,
) -> Result<PatchSet> {
    let (src, dst) = partition(patches);
    let e = match_top_n(&src, &dst, n, cfg)?;
    let merged = merge(patches.data().view(), &e)?;
    let attended = checked_attend(attn, merged.view())?;
    let out = unmerge(attended.view(), &e)?;
    patches.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, c: usize) -> PatchSet {
        PatchSet::from_tokens(Array3::from_shape_fn((2, n, c), |(v, i, k)| {
            ((v * 7 + i * 3 + k) % 11) as f32 * 0.25 - 1.0
        }))
        .unwrap()
    }

    #[test]
    fn zero_pairs_identity() {
        let p = seq(5, 3);
        let out = apply_consistency(&p, 0, &SimilarityConfig::default(), &IdentityAttention).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn equal_views_are_fixed_points() {
        let left = Array3::from_shape_fn((1, 6, 4), |(_, i, k)| ((i * 5 + k * 3) as f32 * 0.7).sin());
        let data = ndarray::concatenate(Axis(0), &[left.view(), left.view()]).unwrap();
        let p = PatchSet::from_tokens(data).unwrap();
        let out = apply_consistency(&p, 6, &SimilarityConfig::default(), &IdentityAttention).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn shape_violating_attention_is_rejected() {
        let p = seq(4, 2);
        let bad = |t: ArrayView2<f32>| Array2::<f32>::zeros((t.nrows() + 1, t.ncols()));
        assert!(matches!(
            apply_consistency(&p, 1, &SimilarityConfig::default(), &bad),
            Err(DfmError::Contract(_))
        ));
    }
}
