//! Shared stereo types, dataset IO, disparity metrics and synthetic data.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod pfm;
pub mod sample;
pub mod synthetic;

pub use dataset::{load_manifest, DatasetEntry, DatasetManifest, EntryFiles, SplitWriter};
pub use error::{CoreError, Result};
pub use eval::{aggregate, evaluate, DisparityPredictor, EvalReport, MetricRecord, PredictionDir, SubsetReport, Weighting};
pub use metrics::{d1, epe, D1Mode};
pub use pfm::{read_pfm, write_pfm, PfmInfo};
pub use sample::StereoSample;
pub use synthetic::{make_synthetic, DisparityPattern};
