//! Weather-conditioned stereo pair generation.
//!
//! Each source pair is re-rendered under a weather prompt by a depth-conditioned
//! two-view generator. Generated pairs keep the source disparity and valid mask
//! byte for byte, so they can be used directly as training data.

pub mod config;
pub mod depth;
pub mod diffusion;
pub mod error;
pub mod http;
pub mod pipeline;
pub mod prompt;

pub use config::{BackendConfig, BackendKind, BackendSpec, Backends, GenerationConfig, Scheduler};
pub use depth::{normalize_depth, predict_depth, DepthBackend, DepthCondition, LuminanceDepthBackend};
pub use diffusion::{weather_look, ConditionLook, DiffusionBackend, GenerationRequest, MockDiffusionBackend};
pub use error::{BackendError, DatagenError, Result};
pub use http::{HttpDepthBackend, HttpDiffusionBackend, HttpPromptBackend};
pub use pipeline::{
    ensure_writable, generate_pair, output_id, report_path, run_pipeline, sample_seed, GeneratedItem, GeneratedPair,
    GenerationReport, SkippedItem, REPORT_FILE,
};
pub use prompt::{
    build_weather_prompt, parse_conditions, EchoPromptBackend, PromptBackend, PromptSource, WeatherCondition,
    WeatherPrompt,
};
