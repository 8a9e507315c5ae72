//! Synthetic stereo pairs with exact disparity ground truth.
//!
//! The left image samples a seeded continuous texture at integer pixel
//! positions. Each right pixel `x_r` looks up the left surface point `x` with
//! `x - d(x) = x_r` (the nearest surface when several exist) and samples the
//! same texture there, so the pair is consistent with `d` up to PNG
//! quantization. Left pixels that leave the right image or are hidden behind
//! a nearer surface are marked invalid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{load_manifest, DatasetManifest, EntryFiles, SplitWriter, DEFAULT_SUBSET};
use crate::error::{CoreError, Result};
use crate::image::{encode_mask_png, encode_rgb_png};
use crate::pfm::encode_pfm;
use crate::sample::StereoSample;

/// Disparity field family used by [`make_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub enum DisparityPattern {
    /// Same disparity everywhere.
    Constant(f64),
    /// Linear in the column: `from` at `x = 0`, `to` at `x = W - 1`.
    Gradient { from: f64, to: f64 },
    /// Square blocks of side `block` with seeded integer disparities in `[min, max]`.
    Blocky { min: u32, max: u32, block: usize },
    /// Alternates a seeded constant and a seeded gradient, all values in `[0, max]`.
    Mixed { max: f64 },
}

impl FromStr for DisparityPattern {
    type Err = CoreError;

    /// `constant:<d>`, `gradient:<from>:<to>`, `blocky:<min>:<max>:<block>`, `mixed:<max>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| CoreError::Argument(format!("bad disparity pattern {s:?}")))
        };
        let pattern = match (parts[0], parts.len()) {
            ("constant", 2) => DisparityPattern::Constant(num(1)?),
            ("gradient", 3) => DisparityPattern::Gradient {
                from: num(1)?,
                to: num(2)?,
            },
            ("blocky", 4) => DisparityPattern::Blocky {
                min: num(1)? as u32,
                max: num(2)? as u32,
                block: num(3)? as usize,
            },
            ("mixed", 2) => DisparityPattern::Mixed { max: num(1)? },
            _ => {
                return Err(CoreError::Argument(format!(
                    "unknown disparity pattern {s:?} (expected constant:<d>, gradient:<a>:<b>, blocky:<min>:<max>:<block> or mixed:<max>)"
                )))
            }
        };
        match &pattern {
            DisparityPattern::Blocky { min, max, block } if min > max || *block == 0 => {
                Err(CoreError::Argument(format!("bad blocky pattern {s:?}")))
            }
            _ => Ok(pattern),
        }
    }
}

impl std::fmt::Display for DisparityPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DisparityPattern::Constant(d) => write!(f, "constant:{d}"),
            DisparityPattern::Gradient { from, to } => write!(f, "gradient:{from}:{to}"),
            DisparityPattern::Blocky { min, max, block } => write!(f, "blocky:{min}:{max}:{block}"),
            DisparityPattern::Mixed { max } => write!(f, "mixed:{max}"),
        }
    }
}

/// A concrete per-sample disparity field in left-image coordinates.
#[derive(Debug, Clone)]
enum Field {
    Constant(f64),
    Gradient { from: f64, slope: f64 },
    Blocky { block: usize, values: Array2<u32> },
}

impl Field {
    fn at(&self, x: f64, y: usize) -> f64 {
        match self {
            Field::Constant(d) => *d,
            Field::Gradient { from, slope } => from + slope * x,
            Field::Blocky { block, values } => {
                let bx = ((x + 0.5).floor().max(0.0) as usize / block).min(values.dim().1 - 1);
                values[[y / block, bx]] as f64
            }
        }
    }

    /// Left positions `x` in `[0, width - 1]` with `x - d(x) = xr`.
    fn preimages(&self, xr: f64, y: usize, width: usize) -> Vec<f64> {
        let max_x = (width - 1) as f64;
        let inside = |x: f64| (0.0..=max_x).contains(&x);
        match self {
            Field::Constant(d) => Some(xr + d).filter(|x| inside(*x)).into_iter().collect(),
            Field::Gradient { from, slope } => Some((xr + from) / (1.0 - slope))
                .filter(|x| inside(*x))
                .into_iter()
                .collect(),
            Field::Blocky { block, values } => {
                let cols = values.dim().1;
                let row = y / block;
                (0..cols)
                    .filter_map(|bx| {
                        let x = xr + values[[row, bx]] as f64;
                        let lo = (bx * block) as f64 - 0.5;
                        let hi = ((bx + 1) * block) as f64 - 0.5;
                        let hit = inside(x) && x >= lo && (x < hi || bx + 1 == cols);
                        hit.then_some(x)
                    })
                    .collect()
            }
        }
    }
}

/// Seeded sum-of-sinusoids texture, continuous in `(u, v)`.
#[derive(Debug, Clone)]
struct Texture {
    // per channel: (fu, fv, phase, amplitude)
    waves: [Vec<(f64, f64, f64, f64)>; 3],
}

impl Texture {
    const WAVES: usize = 10;

    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut channel = || {
            (0..Self::WAVES)
                .map(|_| {
                    let freq = rng.random_range(0.08..1.1);
                    let dir = rng.random_range(0.0..PI);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let amp = rng.random_range(0.5..1.0);
                    (freq * dir.cos(), freq * dir.sin(), phase, amp)
                })
                .collect::<Vec<_>>()
        };
        Texture {
            waves: [channel(), channel(), channel()],
        }
    }

    fn sample(&self, c: usize, u: f64, v: f64) -> f32 {
        let s: f64 = self.waves[c]
            .iter()
            .map(|(fu, fv, ph, a)| a * (fu * u + fv * v + ph).sin())
            .sum();
        (0.5 + 0.5 * (0.6 * s).tanh()) as f32
    }
}

fn field_for(pattern: &DisparityPattern, index: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Field {
    let slope = |from: f64, to: f64| (to - from) / (w - 1).max(1) as f64;
    match pattern {
        DisparityPattern::Constant(d) => Field::Constant(*d),
        DisparityPattern::Gradient { from, to } => Field::Gradient {
            from: *from,
            slope: slope(*from, *to),
        },
        DisparityPattern::Blocky { min, max, block } => {
            let values = Array2::from_shape_fn((h.div_ceil(*block), w.div_ceil(*block)), |_| {
                rng.random_range(*min..=*max)
            });
            Field::Blocky {
                block: *block,
                values,
            }
        }
        DisparityPattern::Mixed { max } => {
            if index % 2 == 0 {
                Field::Constant(rng.random_range(0.0..=*max))
            } else {
                let from = rng.random_range(0.0..=*max);
                let to = rng.random_range(0.0..=*max);
                Field::Gradient {
                    from,
                    slope: slope(from, to),
                }
            }
        }
    }
}

/// Builds one synthetic sample in memory.
pub fn synthesize_sample(
    id: &str,
    index: usize,
    height: usize,
    width: usize,
    pattern: &DisparityPattern,
    seed: u64,
) -> Result<StereoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
    let texture = Texture::new(&mut rng);
    let field = field_for(pattern, index, height, width, &mut rng);
    if let Field::Gradient { slope, .. } = field {
        if slope >= 1.0 {
            return Err(CoreError::Argument("gradient slope must stay below 1 px/px".into()));
        }
    }

    let mut left = Array3::<f32>::zeros((3, height, width));
    let mut right = Array3::<f32>::zeros((3, height, width));
    let mut disparity = Array2::<f32>::zeros((height, width));
    let mut valid = Array2::<bool>::from_elem((height, width), false);

    for y in 0..height {
        let v = y as f64;
        for x in 0..width {
            let xf = x as f64;
            let d = field.at(xf, y);
            disparity[[y, x]] = d as f32;
            let xr = xf - d;
            valid[[y, x]] = xr >= 0.0
                && field
                    .preimages(xr, y, width)
                    .iter()
                    .all(|&c| field.at(c, y) <= d + 1e-9);
            for c in 0..3 {
                left[[c, y, x]] = texture.sample(c, xf, v);
            }

            let nearest = field
                .preimages(xf, y, width)
                .into_iter()
                .map(|c| (field.at(c, y), c))
                .fold(None, |best: Option<(f64, f64)>, cand| match best {
                    Some(b) if b.0 >= cand.0 => Some(b),
                    _ => Some(cand),
                });
            for c in 0..3 {
                right[[c, y, x]] = match nearest {
                    Some((_, lx)) => texture.sample(c, lx, v),
                    // disoccluded: content not visible in the left view
                    None => texture.sample(c, xf + 1000.0, v + 1000.0),
                };
            }
        }
    }
    StereoSample::new(id, left, right, disparity, valid)
}

/// Writes `count` synthetic pairs to `<out_root>/<split>` and returns the loaded manifest.
pub fn make_synthetic(
    out_root: impl AsRef<Path>,
    split: &str,
    count: usize,
    resolution: (usize, usize),
    pattern: &DisparityPattern,
    seed: u64,
) -> Result<DatasetManifest> {
    let (height, width) = resolution;
    if height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0 {
        return Err(CoreError::Argument(format!(
            "resolution {height}x{width} must be a nonzero multiple of 32"
        )));
    }
    let out_root = out_root.as_ref();
    let writer = SplitWriter::create(out_root, split)?;
    let mut subsets = BTreeMap::new();
    for index in 0..count {
        let id = format!("{index:06}");
        let sample = synthesize_sample(&id, index, height, width, pattern, seed)?;
        let files = EntryFiles {
            id: id.clone(),
            left_png: encode_rgb_png(sample.left.view())?,
            right_png: encode_rgb_png(sample.right.view())?,
            disparity_pfm: encode_pfm(&sample.disparity, true)?,
            mask_png: Some(encode_mask_png(sample.valid_mask.view())?),
        };
        writer.write_entry(&files)?;
        subsets.insert(id, DEFAULT_SUBSET.to_string());
    }
    writer.write_subsets(&subsets)?;
    load_manifest(out_root, split)
}
