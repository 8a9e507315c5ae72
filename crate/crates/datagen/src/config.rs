//! Generation config document and backend construction.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use stereo_dfm::DfmSettings;

use crate::depth::{DepthBackend, LuminanceDepthBackend};
use crate::diffusion::{DiffusionBackend, MockDiffusionBackend};
use crate::error::{DatagenError, Result};
use crate::http::{HttpDepthBackend, HttpDiffusionBackend, HttpPromptBackend};
use crate::prompt::{EchoPromptBackend, PromptBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    #[default]
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    #[serde(alias = "real")]
    Http,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    #[serde(default)]
    pub id: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            id: BackendKind::Mock,
            endpoint: None,
            timeout_secs: default_timeout(),
        }
    }
}

impl BackendSpec {
    fn endpoint(&self, role: &str) -> Result<&str> {
        self.endpoint
            .as_deref()
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| DatagenError::Config(format!("backends.{role}.endpoint is required for an http backend")))
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

fn default_grain() -> f32 {
    MockDiffusionBackend::default().grain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub diffusion: BackendSpec,
    #[serde(default)]
    pub depth: BackendSpec,
    #[serde(default)]
    pub prompt: BackendSpec,
    /// Texture amplitude of the mock diffusion backend.
    #[serde(default = "default_grain")]
    pub mock_grain: f32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            diffusion: BackendSpec::default(),
            depth: BackendSpec::default(),
            prompt: BackendSpec::default(),
            mock_grain: default_grain(),
        }
    }
}

impl BackendConfig {
    pub fn set_kind(&mut self, kind: BackendKind) {
        self.diffusion.id = kind;
        self.depth.id = kind;
        self.prompt.id = kind;
    }
}

fn default_steps() -> usize {
    50
}

fn default_guidance() -> f64 {
    7.5
}

fn default_conditioning() -> f64 {
    1.0
}

fn default_dfm() -> Option<DfmSettings> {
    Some(DfmSettings::default())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().min(8))
}

/// Generation settings. `dfm: null` disables the consistency hook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default = "default_guidance")]
    pub guidance_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_conditioning")]
    pub conditioning_scale: f64,
    #[serde(default = "default_dfm")]
    pub dfm: Option<DfmSettings>,
    #[serde(default)]
    pub backends: BackendConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            steps: default_steps(),
            scheduler: Scheduler::Ddim,
            guidance_scale: default_guidance(),
            seed: 0,
            conditioning_scale: default_conditioning(),
            dfm: default_dfm(),
            backends: BackendConfig::default(),
            workers: default_workers(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(DatagenError::Config("steps must be at least 1".into()));
        }
        if !self.guidance_scale.is_finite() {
            return Err(DatagenError::Config("guidance_scale must be finite".into()));
        }
        if !self.conditioning_scale.is_finite() || self.conditioning_scale < 0.0 {
            return Err(DatagenError::Config("conditioning_scale must be finite and >= 0".into()));
        }
        if self.workers == 0 {
            return Err(DatagenError::Config("workers must be at least 1".into()));
        }
        let grain = self.backends.mock_grain;
        if !grain.is_finite() || grain < 0.0 {
            return Err(DatagenError::Config("backends.mock_grain must be finite and >= 0".into()));
        }
        if let Some(dfm) = &self.dfm {
            dfm.similarity()?;
            if let Some([a, b]) = dfm.timesteps {
                if a >= b {
                    return Err(DatagenError::Config(format!("empty dfm timestep range [{a}, {b})")));
                }
            }
        }
        for (role, spec) in [
            ("diffusion", &self.backends.diffusion),
            ("depth", &self.backends.depth),
            ("prompt", &self.backends.prompt),
        ] {
            if spec.id == BackendKind::Http {
                spec.endpoint(role)?;
            }
        }
        Ok(())
    }
}

/// The three model clients a pipeline run uses.
pub struct Backends {
    pub diffusion: Box<dyn DiffusionBackend>,
    pub depth: Box<dyn DepthBackend>,
    pub prompt: Box<dyn PromptBackend>,
}

impl Backends {
    pub fn mock() -> Self {
        Backends {
            diffusion: Box::new(MockDiffusionBackend::default()),
            depth: Box::new(LuminanceDepthBackend),
            prompt: Box::new(EchoPromptBackend),
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self> {
        let diffusion: Box<dyn DiffusionBackend> = match cfg.diffusion.id {
            BackendKind::Mock => Box::new(MockDiffusionBackend { grain: cfg.mock_grain }),
            BackendKind::Http => Box::new(HttpDiffusionBackend::new(
                cfg.diffusion.endpoint("diffusion")?,
                cfg.diffusion.timeout(),
            )),
        };
        let depth: Box<dyn DepthBackend> = match cfg.depth.id {
            BackendKind::Mock => Box::new(LuminanceDepthBackend),
            BackendKind::Http => Box::new(HttpDepthBackend::new(cfg.depth.endpoint("depth")?, cfg.depth.timeout())),
        };
        let prompt: Box<dyn PromptBackend> = match cfg.prompt.id {
            BackendKind::Mock => Box::new(EchoPromptBackend),
            BackendKind::Http => Box::new(HttpPromptBackend::new(cfg.prompt.endpoint("prompt")?, cfg.prompt.timeout())),
        };
        Ok(Backends {
            diffusion,
            depth,
            prompt,
        })
    }
}
