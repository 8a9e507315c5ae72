use ndarray::{Array2, Array3};

use crate::dataset::DatasetEntry;
use crate::error::{CoreError, Result};
use crate::image::{load_mask_png, load_rgb};
use crate::pfm::read_pfm;

/// A rectified stereo pair with left-view disparity ground truth.
///
/// Images are `[3, H, W]` in `[0, 1]`; `disparity` and `valid_mask` are `[H, W]`.
/// Pixels without ground truth are marked invalid rather than given sentinel values.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub left: Array3<f32>,
    pub right: Array3<f32>,
    pub disparity: Array2<f32>,
    pub valid_mask: Array2<bool>,
}

impl StereoSample {
    pub fn new(
        id: impl Into<String>,
        left: Array3<f32>,
        right: Array3<f32>,
        disparity: Array2<f32>,
        valid_mask: Array2<bool>,
    ) -> Result<Self> {
        let sample = StereoSample {
            id: id.into(),
            left,
            right,
            disparity,
            valid_mask,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Fully valid ground truth.
    pub fn dense(
        id: impl Into<String>,
        left: Array3<f32>,
        right: Array3<f32>,
        disparity: Array2<f32>,
    ) -> Result<Self> {
        let mask = Array2::from_elem(disparity.dim(), true);
        Self::new(id, left, right, disparity, mask)
    }

    pub fn height(&self) -> usize {
        self.left.dim().1
    }

    pub fn width(&self) -> usize {
        self.left.dim().2
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self) -> Result<()> {
        let (cl, h, w) = self.left.dim();
        let (cr, hr, wr) = self.right.dim();
        if cl != 3 || cr != 3 {
            return Err(CoreError::Shape(format!(
                "{}: images must have 3 channels (left {cl}, right {cr})",
                self.id
            )));
        }
        if (h, w) != (hr, wr) {
            return Err(CoreError::Shape(format!(
                "{}: left is {h}x{w} but right is {hr}x{wr}",
                self.id
            )));
        }
        if self.disparity.dim() != (h, w) || self.valid_mask.dim() != (h, w) {
            return Err(CoreError::Shape(format!(
                "{}: disparity {:?} / mask {:?} do not match image {h}x{w}",
                self.id,
                self.disparity.dim(),
                self.valid_mask.dim()
            )));
        }
        for (&d, &m) in self.disparity.iter().zip(self.valid_mask.iter()) {
            if m && !(d.is_finite() && d >= 0.0) {
                return Err(CoreError::Validation(format!(
                    "{}: valid disparity must be finite and >= 0, found {d}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Decodes the files of a manifest entry. A missing mask file means all pixels are valid.
    pub fn load(entry: &DatasetEntry) -> Result<Self> {
        let left = load_rgb(&entry.left)?;
        let right = load_rgb(&entry.right)?;
        let (disparity, _) = read_pfm(&entry.disparity)?;
        let valid_mask = match &entry.mask {
            Some(p) => load_mask_png(p)?,
            None => Array2::from_elem(disparity.dim(), true),
        };
        Self::new(entry.id.clone(), left, right, disparity, valid_mask)
    }
}
