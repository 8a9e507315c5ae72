//! Robust multi-scale feature encoder and a small iterative stereo network.
//!
//! Everything is built on candle tensors with a seeded [`ParamStore`], so a
//! model is fully determined by its config and seed. Models work in f32 for
//! training and f64 for gradient checks.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod inspect;
pub mod layers;
pub mod params;
pub mod stereo;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{
    fit_artifact_map, position_code, remove_artifact, ConvPyramid, DenoiserModel, EncoderConfig, FeaturePyramid,
    RobustEncoder, SCALES,
};
pub use error::{NetError, Result};
pub use params::{Init, ParamStore};
pub use stereo::{
    batch_tensors, build_cost_volume, l1_loss, soft_argmin, CostVolume, DisparityEstimate, Refiner, StereoConfig,
    StereoNet,
};
pub use train::{spawn_batches, train, BatchQueue, TrainConfig, Trainer};

pub use candle_core::{DType, Tensor};
