//! Correlation cost volume, soft-argmin regression and a recurrent residual
//! refiner on top of [`RobustEncoder`] features.

use candle_core::{DType, Tensor};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use stereo_core::image::{crop2, pad_to_multiple};
use stereo_core::{CoreError, DisparityPredictor, StereoSample};

use crate::encoder::{check_divisible, EncoderConfig, FeaturePyramid, RobustEncoder};
use crate::error::{NetError, Result};
use crate::layers::{image_tensor, resize, Conv2d};
use crate::params::ParamStore;

fn default_d() -> usize {
    48
}

fn default_k() -> usize {
    4
}

fn default_hidden() -> usize {
    32
}

fn default_radius() -> usize {
    3
}

fn default_temperature() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereoConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// Quarter-resolution disparity candidates `0..D`.
    #[serde(default = "default_d")]
    pub max_disparity: usize,
    #[serde(default = "default_k")]
    pub iterations: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_hidden")]
    pub context: usize,
    /// Cost lookup radius around the current estimate, in quarter-resolution pixels.
    #[serde(default = "default_radius")]
    pub radius: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        StereoConfig {
            encoder: EncoderConfig::default(),
            max_disparity: default_d(),
            iterations: default_k(),
            hidden: default_hidden(),
            context: default_hidden(),
            radius: default_radius(),
            temperature: default_temperature(),
        }
    }
}

impl StereoConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.max_disparity == 0 {
            return Err(NetError::Argument("disparity range D must be at least 1".into()));
        }
        if self.hidden == 0 || self.context == 0 {
            return Err(NetError::Argument("refiner widths must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(NetError::Argument(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Upper clamp of full-resolution disparities.
    pub fn full_range(&self) -> f64 {
        4.0 * (self.max_disparity - 1) as f64
    }
}

/// Matching costs `[B, D, H/4, W/4]`.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub volume: Tensor,
}

impl CostVolume {
    pub fn d_range(&self) -> usize {
        self.volume.dims()[1]
    }
}

fn unit_channels(f: &Tensor) -> Result<Tensor> {
    let norm = (f.sqr()?.sum_keepdim(1)? + 1e-12)?.sqrt()?;
    Ok(f.broadcast_div(&norm)?)
}

/// `cost[d, y, x]` = cosine of `left[:, y, x]` and `right[:, y, x - d]`; `-1` where `x < d`.
pub fn build_cost_volume(left: &Tensor, right: &Tensor, d: usize) -> Result<CostVolume> {
    if left.dims() != right.dims() {
        return Err(NetError::Argument(format!(
            "feature shapes differ: {:?} vs {:?}",
            left.dims(),
            right.dims()
        )));
    }
    let (b, _, h, w) = left.dims4()?;
    if d == 0 || d > w {
        return Err(NetError::Argument(format!("disparity range {d} must be in 1..={w} (quarter width)")));
    }
    let (l, r) = (unit_channels(left)?, unit_channels(right)?);
    let mut slices = Vec::with_capacity(d);
    for s in 0..d {
        let corr = (l.narrow(3, s, w - s)? * r.narrow(3, 0, w - s)?)?.sum_keepdim(1)?;
        let slice = if s == 0 {
            corr
        } else {
            let pad = Tensor::full(-1f32, (b, 1, h, s), left.device())?.to_dtype(left.dtype())?;
            Tensor::cat(&[&pad, &corr], 3)?
        };
        slices.push(slice);
    }
    Ok(CostVolume {
        volume: Tensor::cat(&slices, 1)?,
    })
}

/// Expected disparity under `softmax(cost / temperature)` over the candidate axis: `[B, h, w]`.
pub fn soft_argmin(volume: &CostVolume, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(NetError::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    let v = &volume.volume;
    let d = volume.d_range();
    let logits = (v / temperature)?;
    let e = logits.broadcast_sub(&logits.max_keepdim(1)?)?.exp()?;
    let idx = Tensor::arange(0u32, d as u32, v.device())?
        .to_dtype(v.dtype())?
        .reshape((1, d, 1, 1))?;
    let num = e.broadcast_mul(&idx)?.sum(1)?;
    Ok((num / e.sum(1)?)?)
}

/// Costs sampled at `q + o` for `o ∈ [-r, r]` with linear interpolation along the candidate axis.
fn lookup(volume: &CostVolume, q: &Tensor, radius: usize) -> Result<Tensor> {
    let v = &volume.volume;
    let (b, d, h, w) = v.dims4()?;
    let n = 2 * radius + 1;
    let offsets = Tensor::arange(-(radius as i64), radius as i64 + 1, v.device())?
        .to_dtype(v.dtype())?
        .reshape((1, n, 1, 1))?;
    let pos = q.broadcast_add(&offsets)?.clamp(0f64, (d - 1) as f64)?;
    let lo = pos.detach().floor()?.clamp(0f64, d.saturating_sub(2) as f64)?;
    let frac = (&pos - &lo)?;
    let i0 = lo.to_dtype(DType::U32)?.contiguous()?;
    let i1 = (lo + 1.0)?.clamp(0f64, (d - 1) as f64)?.to_dtype(DType::U32)?.contiguous()?;
    debug_assert_eq!(i0.dims(), &[b, n, h, w]);
    let g0 = v.contiguous()?.gather(&i0, 1)?;
    let g1 = v.contiguous()?.gather(&i1, 1)?;
    Ok((g0.broadcast_mul(&(1.0 - &frac)?)? + g1.broadcast_mul(&frac)?)?)
}

fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Full-resolution disparities of one forward pass, each `[B, H, W]`.
#[derive(Debug, Clone)]
pub struct DisparityEstimate {
    pub initial: Tensor,
    pub refined: Vec<Tensor>,
}

impl DisparityEstimate {
    pub fn iterations(&self) -> usize {
        self.refined.len()
    }

    /// The last refined map, or the initial one when no refinement ran.
    pub fn final_map(&self) -> &Tensor {
        self.refined.last().unwrap_or(&self.initial)
    }
}

/// Quarter-resolution convolutional GRU emitting residual disparity updates.
#[derive(Debug, Clone)]
pub struct Refiner {
    context: Conv2d,
    gate_z: Conv2d,
    gate_r: Conv2d,
    candidate: Conv2d,
    head: Conv2d,
    delta: Conv2d,
    hidden: usize,
    radius: usize,
    d_range: usize,
}

impl Refiner {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &StereoConfig) -> Result<Self> {
        let [_, c8, c16, c32] = cfg.encoder.channels;
        let (hd, cx) = (cfg.hidden, cfg.context);
        let motion = 2 * cfg.radius + 2;
        let x_in = cx + motion;
        Ok(Refiner {
            context: Conv2d::new(store, &format!("{prefix}.context"), (c8 + c16 + c32, hd + cx), 1, 1, true)?,
            gate_z: Conv2d::new(store, &format!("{prefix}.gate_z"), (hd + x_in, hd), 3, 1, true)?,
            gate_r: Conv2d::new(store, &format!("{prefix}.gate_r"), (hd + x_in, hd), 3, 1, true)?,
            candidate: Conv2d::new(store, &format!("{prefix}.candidate"), (hd + x_in, hd), 3, 1, true)?,
            head: Conv2d::new(store, &format!("{prefix}.head"), (hd, hd), 3, 1, true)?,
            delta: Conv2d::zeros(store, &format!("{prefix}.delta"), (hd, 1), 3)?,
            hidden: hd,
            radius: cfg.radius,
            d_range: cfg.max_disparity,
        })
    }

    /// `initial`: quarter-resolution soft-argmin `[B, h, w]`; returns full-resolution maps.
    pub fn forward(
        &self,
        volume: &CostVolume,
        initial: &Tensor,
        left: &FeaturePyramid,
        k: usize,
        (full_h, full_w): (usize, usize),
    ) -> Result<DisparityEstimate> {
        let (_, h, w) = initial.dims3()?;
        let up = |t: &Tensor| -> Result<Tensor> { Ok((resize(t, full_h, full_w)? * 4.0)?) };
        let initial_up = up(initial)?;
        let mut refined = Vec::with_capacity(k);
        if k == 0 {
            return Ok(DisparityEstimate {
                initial: initial_up,
                refined,
            });
        }
        let ctx = Tensor::cat(&[resize(&left.f8, h, w)?, resize(&left.f16, h, w)?, resize(&left.f32, h, w)?], 1)?;
        let ctx = self.context.forward(&ctx)?;
        let mut hid = ctx.narrow(1, 0, self.hidden)?.tanh()?;
        let inp = ctx.narrow(1, self.hidden, ctx.dim(1)? - self.hidden)?.silu()?;

        let d_top = (self.d_range - 1) as f64;
        let mut q = initial.unsqueeze(1)?;
        let mut full = initial_up.clone();
        for _ in 0..k {
            let corr = lookup(volume, &q, self.radius)?;
            let x = Tensor::cat(&[&inp, &corr, &(&q / self.d_range as f64)?], 1)?;
            let hx = Tensor::cat(&[&hid, &x], 1)?;
            let z = sigmoid(&self.gate_z.forward(&hx)?)?;
            let r = sigmoid(&self.gate_r.forward(&hx)?)?;
            let cand = self.candidate.forward(&Tensor::cat(&[&(&r * &hid)?, &x], 1)?)?.tanh()?;
            hid = ((&hid * (1.0 - &z)?)? + (&z * cand)?)?;
            let dq = self.delta.forward(&self.head.forward(&hid)?.silu()?)?;
            q = (q + &dq)?.clamp(0f64, d_top)?;
            full = (full + up(&dq.squeeze(1)?)?)?.clamp(0f64, 4.0 * d_top)?;
            refined.push(full.clone());
        }
        Ok(DisparityEstimate {
            initial: initial_up,
            refined,
        })
    }
}

/// `Σ_k γ^(K−k)·mean|refined_k − gt| + γ^(K+1)·mean|initial − gt|`, means over valid pixels.
///
/// `gt` is `[B, H, W]`; `mask` holds 1 at valid pixels and 0 elsewhere.
pub fn l1_loss(est: &DisparityEstimate, gt: &Tensor, mask: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(NetError::Argument(format!("gamma must be in (0, 1], got {gamma}")));
    }
    if est.initial.dims() != gt.dims() || gt.dims() != mask.dims() {
        return Err(NetError::Argument(format!(
            "prediction {:?}, ground truth {:?} and mask {:?} must share a shape",
            est.initial.dims(),
            gt.dims(),
            mask.dims()
        )));
    }
    let count = mask.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if count <= 0.0 {
        return Err(NetError::UndefinedLoss("no valid ground-truth pixels".into()));
    }
    let mean_err = |p: &Tensor| -> Result<Tensor> { Ok(((p - gt)?.abs()? * mask)?.sum_all()?.affine(1.0 / count, 0.0)?) };
    let k = est.refined.len() as i32;
    let mut loss = (mean_err(&est.initial)? * gamma.powi(k + 1))?;
    for (i, r) in est.refined.iter().enumerate() {
        loss = (loss + (mean_err(r)? * gamma.powi(k - 1 - i as i32))?)?;
    }
    Ok(loss)
}

/// Encoder, matching stage and refiner.
#[derive(Debug, Clone)]
pub struct StereoNet {
    config: StereoConfig,
    encoder: RobustEncoder,
    refiner: Refiner,
}

impl StereoNet {
    pub fn new(store: &mut ParamStore, config: StereoConfig) -> Result<Self> {
        config.validate()?;
        Ok(StereoNet {
            encoder: RobustEncoder::new(store, "encoder", config.encoder.clone())?,
            refiner: Refiner::new(store, "refiner", &config)?,
            config,
        })
    }

    pub fn config(&self) -> &StereoConfig {
        &self.config
    }

    pub fn encoder(&self) -> &RobustEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut RobustEncoder {
        &mut self.encoder
    }

    pub fn dtype(&self) -> DType {
        self.encoder.dtype()
    }

    /// `[B, 3, H, W]` pair → estimate with `k` refinement iterations.
    pub fn forward_k(&self, left: &Tensor, right: &Tensor, k: usize) -> Result<DisparityEstimate> {
        let (_, _, h, w) = left.dims4()?;
        check_divisible(h, w)?;
        let fl = self.encoder.forward(left)?;
        let fr = self.encoder.forward(right)?;
        let volume = build_cost_volume(&fl.f4, &fr.f4, self.config.max_disparity)?;
        let initial = soft_argmin(&volume, self.config.temperature)?;
        self.refiner.forward(&volume, &initial, &fl, k, (h, w))
    }

    pub fn forward(&self, left: &Tensor, right: &Tensor) -> Result<DisparityEstimate> {
        self.forward_k(left, right, self.config.iterations)
    }

    /// Full-resolution disparity for one sample of any size (edge-padded to a multiple of 32, then cropped).
    pub fn predict(&self, sample: &StereoSample) -> Result<Array2<f32>> {
        let (h, w) = (sample.height(), sample.width());
        let left = image_tensor(pad_to_multiple(sample.left.view(), 32).view(), self.dtype())?;
        let right = image_tensor(pad_to_multiple(sample.right.view(), 32).view(), self.dtype())?;
        let est = self.forward(&left, &right)?;
        let map = crate::layers::tensor_to_array2(&est.final_map().get(0)?)?;
        Ok(crop2(map.view(), h, w).mapv(|v| v.max(0.0)))
    }
}

impl DisparityPredictor for StereoNet {
    fn predict_disparity(&self, sample: &StereoSample) -> stereo_core::Result<Array2<f32>> {
        self.predict(sample).map_err(|e| CoreError::Predictor(e.to_string()))
    }
}

/// Stacks equally sized samples into `(left, right, gt, mask)` batch tensors.
pub fn batch_tensors(samples: &[StereoSample], dtype: DType) -> Result<[Tensor; 4]> {
    let first = samples
        .first()
        .ok_or_else(|| NetError::Argument("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    if samples.iter().any(|s| (s.height(), s.width()) != (h, w)) {
        return Err(NetError::Argument("batch samples differ in resolution".into()));
    }
    check_divisible(h, w)?;
    let views = |f: &dyn Fn(&StereoSample) -> Array3<f32>| -> Result<Tensor> {
        let stacked: Vec<Array3<f32>> = samples.iter().map(f).collect();
        let v: Vec<_> = stacked.iter().map(|a| a.view()).collect();
        let arr = ndarray::stack(Axis(0), &v).map_err(|e| NetError::Argument(e.to_string()))?;
        let shape = arr.shape().to_vec();
        Ok(Tensor::from_iter(arr.into_iter(), &candle_core::Device::Cpu)?
            .reshape(shape)?
            .to_dtype(dtype)?)
    };
    let left = views(&|s| s.left.clone())?;
    let right = views(&|s| s.right.clone())?;
    let gt = views(&|s| s.disparity.clone().insert_axis(Axis(0)))?.squeeze(1)?;
    let mask = views(&|s| s.valid_mask.mapv(|m| if m { 1.0 } else { 0.0 }).insert_axis(Axis(0)))?.squeeze(1)?;
    Ok([left, right, gt, mask])
}
