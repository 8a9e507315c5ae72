use std::cmp::Ordering;

use crate::error::{DfmError, Result};
use crate::patches::TokenSet;
use crate::similarity::{combine, cosine, disparity_agreement, dot, squared_norm, SimilarityConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub src: usize,
    pub dst: usize,
    pub similarity: f64,
}

/// The `n` strongest source→destination links.
///
/// Source indices are distinct; several sources may link to the same destination.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMap {
    pub pairs: Vec<MatchPair>,
    pub n_src: usize,
    pub n_dst: usize,
}

impl MatchMap {
    pub fn empty(n_src: usize, n_dst: usize) -> Self {
        MatchMap {
            pairs: Vec::new(),
            n_src,
            n_dst,
        }
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    /// Checks index ranges and source uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_src];
        for p in &self.pairs {
            if p.src >= self.n_src || p.dst >= self.n_dst {
                return Err(DfmError::Argument(format!(
                    "pair ({}, {}) out of range for {}x{} tokens",
                    p.src, p.dst, self.n_src, self.n_dst
                )));
            }
            if std::mem::replace(&mut seen[p.src], true) {
                return Err(DfmError::Argument(format!("source {} matched twice", p.src)));
            }
        }
        Ok(())
    }

    /// Destination of every source token, `None` when unmatched.
    pub fn src_targets(&self) -> Vec<Option<usize>> {
        let mut t = vec![None; self.n_src];
        for p in &self.pairs {
            t[p.src] = Some(p.dst);
        }
        t
    }
}

/// Orders links strongest first; equal similarities go to the lower `(src, dst)`.
fn link_order(a: &MatchPair, b: &MatchPair) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.src.cmp(&b.src))
        .then(a.dst.cmp(&b.dst))
}

/// Links each source token to its most similar destination token (lowest
/// index on ties) and keeps the `n` strongest links.
pub fn match_top_n(src: &TokenSet, dst: &TokenSet, n: usize, cfg: &SimilarityConfig) -> Result<MatchMap> {
    cfg.validate()?;
    if n > src.len() {
        return Err(DfmError::Argument(format!(
            "cannot select {n} pairs from {} source tokens",
            src.len()
        )));
    }
    if n == 0 {
        return Ok(MatchMap::empty(src.len(), dst.len()));
    }
    if dst.is_empty() {
        return Err(DfmError::Argument("destination set is empty".into()));
    }
    if src.features.ncols() != dst.features.ncols() {
        return Err(DfmError::Argument(format!(
            "feature widths differ: {} vs {}",
            src.features.ncols(),
            dst.features.ncols()
        )));
    }

    let rows = |t: &TokenSet| -> Vec<Vec<f32>> { t.features.rows().into_iter().map(|r| r.to_vec()).collect() };
    let src_rows = rows(src);
    let dst_rows = rows(dst);
    let dst_sq: Vec<f64> = dst_rows.iter().map(|r| squared_norm(r)).collect();

    let mut links: Vec<MatchPair> = src_rows
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let s_sq = squared_norm(s);
            let mut best = MatchPair {
                src: i,
                dst: 0,
                similarity: f64::NEG_INFINITY,
            };
            for (j, d) in dst_rows.iter().enumerate() {
                let feature = cosine(dot(s, d), s_sq, dst_sq[j]);
                let sim = combine(
                    feature,
                    disparity_agreement(src.disparity[i], dst.disparity[j], cfg.d_max),
                    cfg.alpha,
                );
                if sim > best.similarity {
                    best.dst = j;
                    best.similarity = sim;
                }
            }
            best
        })
        .collect();
    links.sort_by(link_order);
    links.truncate(n);
    Ok(MatchMap {
        pairs: links,
        n_src: src.len(),
        n_dst: dst.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn tokens(f: Array2<f32>) -> TokenSet {
        let n = f.nrows();
        TokenSet {
            features: f,
            disparity: vec![0.0; n],
        }
    }

    #[test]
    fn zero_pairs() {
        let t = tokens(array![[1.0f32, 0.0]]);
        let m = match_top_n(&t, &t, 0, &SimilarityConfig::default()).unwrap();
        assert_eq!(m.n(), 0);
    }

    #[test]
    fn single_identical_pair() {
        let t = tokens(array![[0.6f32, 0.8]]);
        let m = match_top_n(&t, &t, 1, &SimilarityConfig::default()).unwrap();
        assert_eq!(m.pairs, vec![MatchPair { src: 0, dst: 0, similarity: 1.0 }]);
    }

    #[test]
    fn too_many_pairs_rejected() {
        let t = tokens(array![[1.0f32]]);
        assert!(matches!(
            match_top_n(&t, &t, 2, &SimilarityConfig::default()),
            Err(DfmError::Argument(_))
        ));
    }

    #[test]
    fn ties_prefer_lower_indices() {
        // both sources equally similar to both destinations
        let src = tokens(array![[1.0f32, 0.0], [1.0, 0.0]]);
        let dst = tokens(array![[2.0f32, 0.0], [3.0, 0.0]]);
        let m = match_top_n(&src, &dst, 1, &SimilarityConfig::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!((m.pairs[0].src, m.pairs[0].dst), (0, 0));
        let m = match_top_n(&src, &dst, 2, &SimilarityConfig::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!((m.pairs[1].src, m.pairs[1].dst), (1, 0));
        m.validate().unwrap();
    }

    #[test]
    fn disparity_term_breaks_feature_ties() {
        let src = TokenSet {
            features: array![[1.0f32, 0.0]],
            disparity: vec![10.0],
        };
        let dst = TokenSet {
            features: array![[1.0f32, 0.0], [1.0, 0.0]],
            disparity: vec![0.0, 10.0],
        };
        let m = match_top_n(&src, &dst, 1, &SimilarityConfig::new(0.5, 20.0).unwrap()).unwrap();
        assert_eq!(m.pairs[0].dst, 1);
    }

    #[test]
    fn validate_catches_bad_maps() {
        let mut m = MatchMap::empty(2, 2);
        m.pairs.push(MatchPair { src: 0, dst: 2, similarity: 0.0 });
        assert!(m.validate().is_err());
        m.pairs[0].dst = 1;
        m.pairs.push(MatchPair { src: 0, dst: 0, similarity: 0.0 });
        assert!(m.validate().is_err());
    }
}
