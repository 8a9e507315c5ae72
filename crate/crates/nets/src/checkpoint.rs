//! Versioned safetensors checkpoints: parameters plus the model config and
//! the fitted artifact map in the header metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::DType;
use ndarray::Array2;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::params::ParamStore;
use crate::stereo::{StereoConfig, StereoNet};

pub const CHECKPOINT_FORMAT: &str = "stereo-nets";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

/// Everything besides the parameters, stored as one JSON header entry so the
/// file bytes do not depend on hash map ordering.
#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: StereoConfig,
    artifact_map: Option<StoredMap>,
}

const HEADER_KEY: &str = "stereo_nets";

pub fn save_checkpoint(model: &StereoNet, store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        artifact_map: model.encoder().denoiser().artifact_map().map(|map| StoredMap {
            rows: map.nrows(),
            cols: map.ncols(),
            values: map.iter().copied().collect(),
        }),
    };
    let json = serde_json::to_string(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    store.save(path, HashMap::from([(HEADER_KEY.to_string(), json)]))
}

/// Rebuilds the model described by the checkpoint and loads its parameters.
pub fn load_checkpoint(path: impl AsRef<Path>, dtype: DType) -> Result<(StereoNet, ParamStore)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    let bad = |msg: String| NetError::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| bad("not a stereo-nets checkpoint".into()))?;
    let header: Header = serde_json::from_str(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad("not a stereo-nets checkpoint".into()));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", header.version)));
    }

    let mut store = ParamStore::new(dtype, 0);
    let mut model = StereoNet::new(&mut store, header.config)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let extra = store.load_values(&st)?;
    if !extra.is_empty() {
        return Err(bad(format!("unexpected tensors {extra:?}")));
    }
    if let Some(stored) = header.artifact_map {
        let map = Array2::from_shape_vec((stored.rows, stored.cols), stored.values)
            .map_err(|e| bad(format!("artifact map: {e}")))?;
        model.encoder_mut().denoiser_mut().set_artifact_map(Some(map))?;
    }
    Ok((model, store))
}
