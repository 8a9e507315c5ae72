//! Named, seeded parameter storage with safetensors persistence.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    /// Uniform with bound `sqrt(3 / fan_in)` (unit variance gain for linear layers).
    FanIn(usize),
}

/// Parameters keyed by dotted names. Creation order is irrelevant: every
/// parameter draws from its own stream seeded by (store seed, name).
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the store seed
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the named parameter, creating it with `init` on first use.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(NetError::Model(format!(
                    "parameter {name} has shape {:?}, requested {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; count],
            Init::Uniform(_) | Init::FanIn(_) => {
                let bound = match init {
                    Init::FanIn(fan_in) => (3.0 / fan_in.max(1) as f64).sqrt(),
                    Init::Uniform(b) => b,
                    Init::Const(_) => unreachable!(),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
                (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place; every module holding it sees the change.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| NetError::Model(format!("no parameter named {name}")))?;
        if var.dims() != value.dims() {
            return Err(NetError::Model(format!(
                "parameter {name} has shape {:?}, value has {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Serializes every parameter as little-endian f32 plus string metadata.
    pub fn to_safetensors(&self, metadata: HashMap<String, String>) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            let values: Vec<f32> = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name.clone(), var.dims().to_vec(), bytes));
        }
        let views = buffers
            .iter()
            .map(|(n, s, b)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b)?)))
            .collect::<Result<Vec<_>, safetensors::SafeTensorError>>()
            .map_err(|e| NetError::Checkpoint(e.to_string()))?;
        safetensors::serialize(views, Some(metadata)).map_err(|e| NetError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: HashMap<String, String>) -> Result<()> {
        let bytes = self.to_safetensors(metadata)?;
        std::fs::write(path.as_ref(), bytes)
            .map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
    }

    /// Copies stored values into existing parameters. Every parameter must be
    /// present with a matching shape; extra stored tensors are returned by name.
    pub fn load_values(&self, st: &SafeTensors<'_>) -> Result<Vec<String>> {
        for (name, var) in &self.vars {
            let view = st
                .tensor(name)
                .map_err(|_| NetError::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            let t = tensor_from_view(&view)?;
            if t.dims() != var.dims() {
                return Err(NetError::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(st
            .names()
            .into_iter()
            .filter(|n| !self.vars.contains_key(*n))
            .map(String::from)
            .collect())
    }
}

pub(crate) fn tensor_from_view(view: &TensorView<'_>) -> Result<Tensor> {
    if view.dtype() != Dtype::F32 {
        return Err(NetError::Checkpoint(format!("unsupported stored dtype {:?}", view.dtype())));
    }
    let values: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(values, view.shape(), &Device::Cpu)?)
}
