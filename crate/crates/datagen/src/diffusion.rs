//! Two-view, depth-conditioned image generation backends.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereo_dfm::{AttentionInterceptor, DfmSettings, PatchSet, SiteInfo};

use crate::depth::DepthCondition;
use crate::error::BackendError;
use crate::prompt::{WeatherCondition, WeatherPrompt};

/// Everything one joint generation call needs.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub left: ArrayView3<'a, f32>,
    pub right: ArrayView3<'a, f32>,
    pub depth: &'a DepthCondition,
    pub prompt: &'a WeatherPrompt,
    pub steps: usize,
    pub guidance_scale: f64,
    pub conditioning_scale: f64,
    pub seed: u64,
    /// Fusion settings for backends that run the consistency hook themselves.
    pub dfm: Option<&'a DfmSettings>,
}

/// Generates both views in one stacked batch; every self-attention call at an
/// exposed site goes through `hook` with `[2, N, C]` tokens.
pub trait DiffusionBackend: Send + Sync {
    /// Attention sites open to an in-process hook. Empty for remote backends,
    /// which apply `GenerationRequest::dfm` on their side.
    fn sites(&self) -> Vec<SiteInfo>;

    fn generate(
        &self,
        request: &GenerationRequest<'_>,
        hook: &mut dyn AttentionInterceptor,
    ) -> Result<[Array3<f32>; 2], BackendError>;
}

/// Per-condition color curve and haze used by the mock backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionLook {
    pub tint: [f32; 3],
    pub gamma: f32,
    pub haze: [f32; 3],
    pub strength: f32,
}

impl ConditionLook {
    pub fn of(condition: WeatherCondition) -> Self {
        let (tint, gamma, haze, strength) = match condition {
            WeatherCondition::Rainy => ([0.80, 0.85, 0.95], 1.15, [0.55, 0.58, 0.62], 0.35),
            WeatherCondition::Foggy => ([0.95, 0.95, 0.95], 0.90, [0.80, 0.80, 0.82], 0.70),
            WeatherCondition::Snowy => ([1.00, 1.00, 1.05], 0.85, [0.92, 0.93, 0.97], 0.45),
            WeatherCondition::Cloudy => ([0.88, 0.88, 0.90], 1.05, [0.65, 0.66, 0.68], 0.25),
            WeatherCondition::Sunny => ([1.08, 1.02, 0.90], 0.95, [1.00, 0.95, 0.80], 0.10),
        };
        ConditionLook {
            tint,
            gamma,
            haze,
            strength,
        }
    }
}

/// `(1 - h)·clamp(tint·x^gamma) + h·haze` with `h = clamp(strength·scale·(1 - depth))`.
pub fn weather_look(image: ArrayView3<f32>, depth: ArrayView2<f32>, look: &ConditionLook, scale: f64) -> Array3<f32> {
    Array3::from_shape_fn(image.dim(), |(c, y, x)| {
        let h = (look.strength * scale as f32 * (1.0 - depth[[y, x]])).clamp(0.0, 1.0);
        let curved = (look.tint[c] * image[[c, y, x]].max(0.0).powf(look.gamma)).clamp(0.0, 1.0);
        (1.0 - h) * curved + h * look.haze[c]
    })
}

/// Deterministic stand-in for a depth-conditioned diffusion model.
///
/// The output is [`weather_look`] of each source view plus `grain` times a
/// texture derived from a small latent that evolves through the attention
/// sites; with `grain = 0` the output is exactly the closed-form look.
#[derive(Debug, Clone, Copy)]
pub struct MockDiffusionBackend {
    pub grain: f32,
}

impl Default for MockDiffusionBackend {
    fn default() -> Self {
        MockDiffusionBackend { grain: 0.03 }
    }
}

const LATENT_STRIDE: usize = 8;
const LATENT_CHANNELS: usize = 4;

fn softmax_attention(t: ndarray::ArrayView2<f32>) -> Array2<f32> {
    let scale = 1.0 / (t.ncols() as f32).sqrt();
    let scores = t.dot(&t.t()) * scale;
    let mut w = scores;
    for mut row in w.rows_mut() {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    let mixed = w.dot(&t);
    (&t.to_owned() + &mixed) * 0.5
}

impl MockDiffusionBackend {
    fn pool(z: &Array4<f32>, block: usize) -> PatchSet {
        let (_, c, lh, lw) = z.dim();
        let (gh, gw) = (lh / block, lw / block);
        let norm = (block * block) as f32;
        let data = ndarray::Array3::from_shape_fn((2, gh * gw, c), |(v, n, k)| {
            let (gy, gx) = (n / gw, n % gw);
            let mut s = 0.0;
            for y in gy * block..(gy + 1) * block {
                for x in gx * block..(gx + 1) * block {
                    s += z[[v, k, y, x]];
                }
            }
            s / norm
        });
        PatchSet::new(data, (gh, gw), (block * LATENT_STRIDE) as u32).expect("pooled grid matches data")
    }
}

impl DiffusionBackend for MockDiffusionBackend {
    fn sites(&self) -> Vec<SiteInfo> {
        vec![SiteInfo::new("down.16", 16), SiteInfo::new("mid.32", 32)]
    }

    fn generate(
        &self,
        req: &GenerationRequest<'_>,
        hook: &mut dyn AttentionInterceptor,
    ) -> Result<[Array3<f32>; 2], BackendError> {
        let (_, h, w) = req.left.dim();
        if req.right.dim() != req.left.dim() || req.depth.left.dim() != (h, w) {
            return Err(BackendError::Input("views and depth maps must share a resolution".into()));
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(BackendError::Input(format!("mock backend needs sizes divisible by 32, got {h}x{w}")));
        }
        let (lh, lw) = (h / LATENT_STRIDE, w / LATENT_STRIDE);
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut z = Array4::from_shape_fn((2, LATENT_CHANNELS, lh, lw), |_| rng.random_range(-1.0f32..1.0));
        let sites = self.sites();
        for step in 0..req.steps {
            for site in &sites {
                let block = site.scale as usize / LATENT_STRIDE;
                let tokens = Self::pool(&z, block);
                let before = tokens.data().clone();
                let gw = tokens.grid().1;
                let out = hook.intercept(site, step, tokens, &softmax_attention)?;
                let delta = out.data() - &before;
                for ((v, k, y, x), val) in z.indexed_iter_mut() {
                    let n = (y / block) * gw + x / block;
                    *val += 0.5 * delta[[v, n, k]];
                }
            }
            z *= 0.98;
        }
        let grain = z.mean_axis(Axis(1)).expect("latent channels");
        let views = [(req.left, &req.depth.left), (req.right, &req.depth.right)];
        let look = ConditionLook::of(req.prompt.condition);
        let mut out = views.map(|(img, depth)| weather_look(img, depth.view(), &look, req.conditioning_scale));
        for (v, img) in out.iter_mut().enumerate() {
            if self.grain == 0.0 {
                continue;
            }
            for ((_, y, x), val) in img.indexed_iter_mut() {
                let g = grain[[v, y / LATENT_STRIDE, x / LATENT_STRIDE]].tanh();
                *val = (*val + self.grain * g).clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}
