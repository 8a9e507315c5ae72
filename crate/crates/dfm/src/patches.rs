use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{DfmError, Result};

/// Two-view token tensor `[2, N, C]`; view 0 is left, view 1 is right.
///
/// `disparity` optionally carries one disparity value per token (`[2, N]`)
/// in the same pixel units as the similarity config's `d_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    data: Array3<f32>,
    grid: (usize, usize),
    scale: u32,
    disparity: Option<Array2<f32>>,
}

impl PatchSet {
    pub fn new(data: Array3<f32>, grid: (usize, usize), scale: u32) -> Result<Self> {
        let (views, n, _) = data.dim();
        if views != 2 {
            return Err(DfmError::Argument(format!("expected 2 views, got {views}")));
        }
        if grid.0 * grid.1 != n {
            return Err(DfmError::Argument(format!(
                "patch grid {}x{} does not hold {n} tokens",
                grid.0, grid.1
            )));
        }
        if scale == 0 {
            return Err(DfmError::Argument("scale must be positive".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DfmError::Argument("patch data must be finite".into()));
        }
        Ok(PatchSet {
            data,
            grid,
            scale,
            disparity: None,
        })
    }

    /// Convenience constructor for a single-row grid.
    pub fn from_tokens(data: Array3<f32>) -> Result<Self> {
        let n = data.dim().1;
        Self::new(data, (1, n), 1)
    }

    pub fn with_disparity(mut self, disparity: Array2<f32>) -> Result<Self> {
        if disparity.dim() != (2, self.len()) {
            return Err(DfmError::Argument(format!(
                "token disparity must be [2, {}], got {:?}",
                self.len(),
                disparity.dim()
            )));
        }
        if disparity.iter().any(|v| !v.is_finite()) {
            return Err(DfmError::Argument("token disparity must be finite".into()));
        }
        self.disparity = Some(disparity);
        Ok(self)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn disparity(&self) -> Option<&Array2<f32>> {
        self.disparity.as_ref()
    }

    /// Number of tokens per view.
    pub fn len(&self) -> usize {
        self.data.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn view_tokens(&self, view: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), view)
    }

    /// Same grid, scale and disparity with new token data.
    pub fn with_data(&self, data: Array3<f32>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(DfmError::Argument(format!(
                "replacement data {:?} does not match {:?}",
                data.dim(),
                self.data.dim()
            )));
        }
        Ok(PatchSet {
            data,
            grid: self.grid,
            scale: self.scale,
            disparity: self.disparity.clone(),
        })
    }
}

/// One view's tokens with their per-token disparities.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub features: Array2<f32>,
    pub disparity: Vec<f32>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits into the source set (left view) and destination set (right view).
/// Missing token disparities are taken as zero.
pub fn partition(patches: &PatchSet) -> (TokenSet, TokenSet) {
    let take = |view: usize| TokenSet {
        features: patches.view_tokens(view).to_owned(),
        disparity: match &patches.disparity {
            Some(d) => d.row(view).to_vec(),
            None => vec![0.0; patches.len()],
        },
    };
    (take(0), take(1))
}
