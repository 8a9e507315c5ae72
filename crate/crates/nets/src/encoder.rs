//! Feature encoder: a convolutional pyramid at strides 4/8/16 and a small
//! transformer branch at stride 32 whose shared positional artifact can be
//! estimated across images and subtracted.

use candle_core::{DType, Tensor};
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use stereo_core::StereoSample;

use crate::error::{NetError, Result};
use crate::layers::{image_tensor, tensor_to_array2, tensor_to_array3, Conv2d, LayerNorm, Linear};
use crate::params::ParamStore;

pub const SCALES: [usize; 4] = [4, 8, 16, 32];

fn default_channels() -> [usize; 4] {
    [32, 64, 96, 128]
}

fn default_true() -> bool {
    true
}

fn default_heads() -> usize {
    4
}

fn default_patch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Channel plan `(C4, C8, C16, C32)`.
    #[serde(default = "default_channels")]
    pub channels: [usize; 4],
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            channels: default_channels(),
            bias: true,
            heads: default_heads(),
            patch_size: default_patch(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(NetError::Argument(format!("channel plan {:?} has a zero width", self.channels)));
        }
        let c32 = self.channels[3];
        if self.heads == 0 || c32 % self.heads != 0 {
            return Err(NetError::Argument(format!("{} heads do not divide token width {c32}", self.heads)));
        }
        if c32 % 4 != 0 {
            return Err(NetError::Argument(format!("token width {c32} must be a multiple of 4")));
        }
        if self.patch_size != 32 {
            return Err(NetError::Argument(format!(
                "the transformer branch works at stride 32, got patch size {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Features of a batch at strides 4, 8, 16 and 32, each `[B, C_i, H/i, W/i]`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub f4: Tensor,
    pub f8: Tensor,
    pub f16: Tensor,
    pub f32: Tensor,
}

impl FeaturePyramid {
    pub fn get(&self, scale: usize) -> Option<&Tensor> {
        match scale {
            4 => Some(&self.f4),
            8 => Some(&self.f8),
            16 => Some(&self.f16),
            32 => Some(&self.f32),
            _ => None,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.f4.dims()[0]
    }

    /// Per-image `[C, h, w]` shapes in scale order.
    pub fn shapes(&self) -> [[usize; 3]; 4] {
        SCALES.map(|s| {
            let d = self.get(s).expect("known scale").dims();
            [d[1], d[2], d[3]]
        })
    }

    /// Batch element `b` at every scale as `[C, h, w]` arrays.
    pub fn to_arrays(&self, b: usize) -> Result<Vec<(usize, ndarray::Array3<f32>)>> {
        SCALES
            .iter()
            .map(|&s| Ok((s, tensor_to_array3(&self.get(s).expect("known scale").get(b)?)?)))
            .collect()
    }
}

pub(crate) fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(NetError::Argument(format!(
            "input {h}x{w} is not divisible by 32; pad with edge replication and crop the output"
        )));
    }
    Ok(())
}

fn check_input(x: &Tensor) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(NetError::Argument(format!("expected 3 input channels, got {c}")));
    }
    check_divisible(h, w)
}

/// Four stride-2 stages; the last three emit the stride 4/8/16 features.
#[derive(Debug, Clone)]
pub struct ConvPyramid {
    stages: Vec<[Conv2d; 2]>,
}

impl ConvPyramid {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let [c4, c8, c16, _] = cfg.channels;
        let stem = (c4 / 2).max(8);
        let widths = [(3, stem), (stem, c4), (c4, c8), (c8, c16)];
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                Ok([
                    Conv2d::new(store, &format!("{prefix}.stage{i}.down"), (a, b), 3, 2, cfg.bias)?,
                    Conv2d::new(store, &format!("{prefix}.stage{i}.mix"), (b, b), 3, 1, cfg.bias)?,
                ])
            })
            .collect::<Result<_>>()?;
        Ok(ConvPyramid { stages })
    }

    /// `[B, 3, H, W]` → `[f4, f8, f16]`.
    pub fn forward(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        check_input(x)?;
        let mut h = x.clone();
        let mut outs = Vec::with_capacity(3);
        for (i, [down, mix]) in self.stages.iter().enumerate() {
            let y = mix.forward(&down.forward(&h)?.silu()?)?;
            h = y.silu()?;
            if i > 0 {
                outs.push(y);
            }
        }
        Ok(outs.try_into().expect("three output stages"))
    }
}

/// Fixed 2D sinusoidal position code `[N, C]` for a `rows`×`cols` grid; half the channels encode rows.
pub fn position_code(rows: usize, cols: usize, width: usize) -> Array2<f64> {
    let quarter = width / 4;
    Array2::from_shape_fn((rows * cols, width), |(n, c)| {
        let (pos, k) = if c < width / 2 { (n / cols, c) } else { (n % cols, c - width / 2) };
        let freq = 1.0 / 100f64.powf((k % quarter) as f64 / quarter as f64);
        let a = pos as f64 * freq;
        if k < quarter {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Transformer branch producing stride-32 tokens, plus the artifact estimate removed from them.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    patch_size: usize,
    token_width: usize,
    heads: usize,
    embed: Conv2d,
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    artifact_map: Option<Array2<f32>>,
}

impl DenoiserModel {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let c = cfg.channels[3];
        Ok(DenoiserModel {
            patch_size: cfg.patch_size,
            token_width: c,
            heads: cfg.heads,
            embed: Conv2d::patchify(store, &format!("{prefix}.embed"), (3, c), cfg.patch_size, cfg.bias)?,
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), c)?,
            qkv: Linear::new(store, &format!("{prefix}.qkv"), (c, 3 * c), cfg.bias)?,
            proj: Linear::new(store, &format!("{prefix}.proj"), (c, c), cfg.bias)?,
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), c)?,
            fc1: Linear::new(store, &format!("{prefix}.fc1"), (c, 2 * c), cfg.bias)?,
            fc2: Linear::new(store, &format!("{prefix}.fc2"), (2 * c, c), cfg.bias)?,
            artifact_map: None,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn token_width(&self) -> usize {
        self.token_width
    }

    pub fn artifact_map(&self) -> Option<&Array2<f32>> {
        self.artifact_map.as_ref()
    }

    pub fn set_artifact_map(&mut self, map: Option<Array2<f32>>) -> Result<()> {
        if let Some(m) = &map {
            if m.ncols() != self.token_width {
                return Err(NetError::Model(format!(
                    "artifact map width {} does not match token width {}",
                    m.ncols(),
                    self.token_width
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(NetError::Model("artifact map is not finite".into()));
            }
        }
        self.artifact_map = map;
        Ok(())
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        let dh = c / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, n, 3, self.heads, dh))?;
        let part = |i: usize| -> Result<Tensor> { Ok(qkv.narrow(2, i, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let weights = crate::layers::softmax(&scores, 3)?;
        let out = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, n, c))?;
        self.proj.forward(&out)
    }

    /// Raw tokens `[B, N, C]` before artifact removal, with the grid size.
    pub fn raw_tokens(&self, x: &Tensor) -> Result<(Tensor, (usize, usize))> {
        check_input(x)?;
        let e = self.embed.forward(x)?;
        let (b, c, gh, gw) = e.dims4()?;
        let pos = Tensor::from_iter(position_code(gh, gw, c).into_iter(), x.device())?
            .reshape((gh * gw, c))?
            .to_dtype(x.dtype())?;
        let t = e.reshape((b, c, gh * gw))?.transpose(1, 2)?.broadcast_add(&pos)?;
        let t = (&t + self.attention(&self.norm1.forward(&t)?)?)?;
        let t = (&t + self.fc2.forward(&self.fc1.forward(&self.norm2.forward(&t)?)?.silu()?)?)?;
        Ok((t, (gh, gw)))
    }

    /// Stride-32 features `[B, C, H/32, W/32]` with the artifact map subtracted.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (t, (gh, gw)) = self.raw_tokens(x)?;
        let (b, n, c) = t.dims3()?;
        let t = match &self.artifact_map {
            None => t,
            Some(map) => {
                if map.dim() != (n, c) {
                    return Err(NetError::Model(format!(
                        "artifact map fitted for {} tokens, input has a {gh}x{gw} grid ({n} tokens)",
                        map.nrows()
                    )));
                }
                let a = Tensor::from_iter(map.iter().copied(), x.device())?
                    .reshape((n, c))?
                    .to_dtype(x.dtype())?;
                t.broadcast_sub(&a)?
            }
        };
        Ok(t.transpose(1, 2)?.reshape((b, c, gh, gw))?)
    }

    /// Fits the artifact map on raw tokens of `images` (all of one resolution).
    pub fn fit_artifact_map(&mut self, images: &[ArrayView3<f32>]) -> Result<()> {
        let mut tokens = Vec::with_capacity(images.len());
        for img in images {
            let (t, _) = self.raw_tokens(&image_tensor(*img, self.norm1.dtype())?)?;
            tokens.push(tensor_to_array2(&t.squeeze(0)?)?);
        }
        let views: Vec<ArrayView2<f32>> = tokens.iter().map(|t| t.view()).collect();
        let map = fit_artifact_map(&views)?;
        self.set_artifact_map(Some(map))
    }
}

/// Shared positional component of token sets `[N, C]` from distinct images:
/// the per-position mean of each set minus its own per-channel mean.
pub fn fit_artifact_map(tokens: &[ArrayView2<f32>]) -> Result<Array2<f32>> {
    if tokens.len() < 2 {
        return Err(NetError::InsufficientData(format!(
            "artifact estimation needs at least 2 images, got {}",
            tokens.len()
        )));
    }
    let dim = tokens[0].dim();
    let mut acc = Array2::<f64>::zeros(dim);
    for t in tokens {
        if t.dim() != dim {
            return Err(NetError::Argument(format!("token sets differ in shape: {:?} vs {dim:?}", t.dim())));
        }
        let t = t.mapv(|v| v as f64);
        let mean = t.mean_axis(Axis(0)).expect("nonempty token set");
        acc += &(&t - &mean);
    }
    Ok((acc / tokens.len() as f64).mapv(|v| v as f32))
}

/// Tokens with a fitted artifact map removed.
pub fn remove_artifact(tokens: ArrayView2<f32>, map: ArrayView2<f32>) -> Result<Array2<f32>> {
    if tokens.dim() != map.dim() {
        return Err(NetError::Model(format!(
            "artifact map {:?} does not match tokens {:?}",
            map.dim(),
            tokens.dim()
        )));
    }
    Ok(&tokens - &map)
}

/// Shared-weight encoder for both views.
#[derive(Debug, Clone)]
pub struct RobustEncoder {
    config: EncoderConfig,
    pyramid: ConvPyramid,
    denoiser: DenoiserModel,
    dtype: DType,
}

impl RobustEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(RobustEncoder {
            pyramid: ConvPyramid::new(store, &format!("{prefix}.pyramid"), &config)?,
            denoiser: DenoiserModel::new(store, &format!("{prefix}.denoiser"), &config)?,
            config,
            dtype: store.dtype(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn denoiser(&self) -> &DenoiserModel {
        &self.denoiser
    }

    pub fn denoiser_mut(&mut self) -> &mut DenoiserModel {
        &mut self.denoiser
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn extract_pyramid(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        self.pyramid.forward(x)
    }

    pub fn extract_denoised(&self, x: &Tensor) -> Result<Tensor> {
        self.denoiser.forward(x)
    }

    /// `[B, 3, H, W]` → all four scales.
    pub fn forward(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let [f4, f8, f16] = self.extract_pyramid(x)?;
        let f32 = self.extract_denoised(x)?;
        Ok(FeaturePyramid { f4, f8, f16, f32 })
    }

    pub fn encode_image(&self, img: ArrayView3<f32>) -> Result<FeaturePyramid> {
        self.forward(&image_tensor(img, self.dtype)?)
    }

    /// Left and right pyramids from the same weights, each image encoded on its own.
    pub fn encode_pair(&self, sample: &StereoSample) -> Result<(FeaturePyramid, FeaturePyramid)> {
        check_divisible(sample.height(), sample.width())?;
        Ok((self.encode_image(sample.left.view())?, self.encode_image(sample.right.view())?))
    }
}
