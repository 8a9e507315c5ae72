//! Installing the consistency step into a two-view generation backend.
//!
//! A backend runs its self-attention sites on stacked `[2, N, C]` latents and
//! hands each call to an [`AttentionInterceptor`]. [`DfmHook`] intercepts the
//! selected sites and replaces their per-view attention with
//! [`apply_consistency`] around the site's own attention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use stereo_core::image::resize_bilinear;

use crate::consistency::{apply_consistency, attend_per_view, TokenAttention};
use crate::error::{DfmError, Result};
use crate::patches::PatchSet;
use crate::similarity::SimilarityConfig;

/// A named self-attention site and its downsampling factor relative to the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteInfo {
    pub name: String,
    pub scale: u32,
}

impl SiteInfo {
    pub fn new(name: impl Into<String>, scale: u32) -> Self {
        SiteInfo {
            name: name.into(),
            scale,
        }
    }
}

/// Which attention sites receive the hook.
///
/// Text forms: `all`, `scale>=<k>`, or a comma separated list of site names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSelector {
    All,
    MinScale(u32),
    Names(Vec<String>),
}

impl Default for LayerSelector {
    fn default() -> Self {
        LayerSelector::MinScale(16)
    }
}

impl LayerSelector {
    pub fn matches(&self, site: &SiteInfo) -> bool {
        match self {
            LayerSelector::All => true,
            LayerSelector::MinScale(k) => site.scale >= *k,
            LayerSelector::Names(names) => names.iter().any(|n| *n == site.name),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = DfmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(LayerSelector::All);
        }
        if let Some(k) = s.strip_prefix("scale>=") {
            return k
                .trim()
                .parse()
                .map(LayerSelector::MinScale)
                .map_err(|_| DfmError::Config(format!("bad scale in layer selector {s:?}")));
        }
        let names: Vec<String> = s
            .split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(DfmError::Config("empty layer selector".into()));
        }
        Ok(LayerSelector::Names(names))
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelector::All => write!(f, "all"),
            LayerSelector::MinScale(k) => write!(f, "scale>={k}"),
            LayerSelector::Names(n) => write!(f, "{}", n.join(",")),
        }
    }
}

impl TryFrom<String> for LayerSelector {
    type Error = DfmError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSelector> for String {
    fn from(s: LayerSelector) -> String {
        s.to_string()
    }
}

fn default_n() -> usize {
    16
}

fn default_alpha() -> f64 {
    0.5
}

fn default_d_max() -> f64 {
    192.0
}

/// `dfm.*` keys of the generation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfmSettings {
    /// Absolute number of fused pairs per site call (clamped to the site's token count).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Full-resolution disparity range.
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    #[serde(default)]
    pub layer_selector: LayerSelector,
    /// Half-open denoising step range `[start, end)` in which the hook is active; all steps when absent.
    #[serde(default)]
    pub timesteps: Option<[usize; 2]>,
}

impl Default for DfmSettings {
    fn default() -> Self {
        DfmSettings {
            n: default_n(),
            alpha: default_alpha(),
            d_max: default_d_max(),
            layer_selector: LayerSelector::default(),
            timesteps: None,
        }
    }
}

impl DfmSettings {
    pub fn similarity(&self) -> Result<SimilarityConfig> {
        SimilarityConfig::new(self.alpha, self.d_max)
    }
}

/// Receives every self-attention call of a backend.
pub trait AttentionInterceptor {
    fn intercept(
        &mut self,
        site: &SiteInfo,
        step: usize,
        tokens: PatchSet,
        native: &dyn TokenAttention,
    ) -> Result<PatchSet>;
}

/// The consistency hook. Holds per-run state only: create one per generated pair.
#[derive(Debug, Clone)]
pub struct DfmHook {
    settings: DfmSettings,
    similarity: SimilarityConfig,
    selected: BTreeSet<String>,
    depth: Option<[Array2<f32>; 2]>,
    invocations: BTreeMap<String, usize>,
}

impl DfmHook {
    /// Fails when the selector matches none of the backend's sites.
    pub fn install(sites: &[SiteInfo], settings: DfmSettings) -> Result<Self> {
        let similarity = settings.similarity()?;
        let selected: BTreeSet<String> = sites
            .iter()
            .filter(|s| settings.layer_selector.matches(s))
            .map(|s| s.name.clone())
            .collect();
        if selected.is_empty() {
            let names: Vec<&str> = sites.iter().map(|s| s.name.as_str()).collect();
            return Err(DfmError::Config(format!(
                "layer selector {:?} matches no attention site (available: {names:?})",
                settings.layer_selector.to_string()
            )));
        }
        if let Some([a, b]) = settings.timesteps {
            if a >= b {
                return Err(DfmError::Config(format!("empty timestep range [{a}, {b})")));
            }
        }
        Ok(DfmHook {
            settings,
            similarity,
            selected,
            depth: None,
            invocations: BTreeMap::new(),
        })
    }

    /// Normalized per-view depth (`[H, W]`, near = 1) used as the token disparity signal.
    pub fn set_depth(&mut self, left: Array2<f32>, right: Array2<f32>) {
        self.depth = Some([left, right]);
    }

    pub fn selected_sites(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(String::as_str)
    }

    pub fn settings(&self) -> &DfmSettings {
        &self.settings
    }

    /// Total number of intercepted calls at selected sites.
    pub fn invocations(&self) -> usize {
        self.invocations.values().sum()
    }

    pub fn invocations_per_site(&self) -> &BTreeMap<String, usize> {
        &self.invocations
    }

    fn active(&self, site: &SiteInfo, step: usize) -> bool {
        self.selected.contains(&site.name)
            && self
                .settings
                .timesteps
                .is_none_or(|[a, b]| (a..b).contains(&step))
    }

    /// Depth resampled to the site's patch grid, in disparity units at that scale.
    fn token_disparity(&self, tokens: &PatchSet) -> Option<Array2<f32>> {
        let depth = self.depth.as_ref()?;
        let (rows, cols) = tokens.grid();
        let units = (self.settings.d_max / tokens.scale() as f64) as f32;
        let mut out = Array2::<f32>::zeros((2, rows * cols));
        for (v, map) in depth.iter().enumerate() {
            let resized = resize_bilinear(map.view(), rows, cols);
            let flat = resized.into_shape_with_order(rows * cols).ok()?;
            out.index_axis_mut(Axis(0), v).assign(&flat.mapv(|d| d * units));
        }
        Some(out)
    }
}

impl AttentionInterceptor for DfmHook {
    fn intercept(
        &mut self,
        site: &SiteInfo,
        step: usize,
        tokens: PatchSet,
        native: &dyn TokenAttention,
    ) -> Result<PatchSet> {
        if !self.active(site, step) {
            return attend_per_view(&tokens, native);
        }
        *self.invocations.entry(site.name.clone()).or_default() += 1;
        let n = self.settings.n.min(tokens.len());
        // without fusion the site keeps its own per-view attention
        if n == 0 {
            return attend_per_view(&tokens, native);
        }
        let tokens = match self.token_disparity(&tokens) {
            Some(d) => tokens.with_disparity(d)?,
            None => tokens,
        };
        apply_consistency(&tokens, n, &self.similarity.at_scale(tokens.scale()), native)
    }
}

/// Interceptor that leaves every site untouched; what a hookless backend does.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl AttentionInterceptor for NoHook {
    fn intercept(
        &mut self,
        _site: &SiteInfo,
        _step: usize,
        tokens: PatchSet,
        native: &dyn TokenAttention,
    ) -> Result<PatchSet> {
        attend_per_view(&tokens, native)
    }
}
