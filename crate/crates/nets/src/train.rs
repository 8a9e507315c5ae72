//! Adam training of [`StereoNet`] with a bounded background batch queue.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use candle_core::DType;
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stereo_core::StereoSample;

use crate::encoder::EncoderConfig;
use crate::error::{NetError, Result};
use crate::params::ParamStore;
use crate::stereo::{batch_tensors, l1_loss, StereoConfig, StereoNet};

fn default_lr() -> f64 {
    1e-3
}

fn default_steps() -> usize {
    2000
}

fn default_batch() -> usize {
    2
}

fn default_k() -> usize {
    4
}

fn default_d() -> usize {
    48
}

fn default_gamma() -> f64 {
    0.9
}

fn default_queue() -> usize {
    4
}

/// `train-toy` options. Model keys beyond `K` and `D` keep their defaults unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(rename = "K", default = "default_k")]
    pub iterations: usize,
    #[serde(rename = "D", default = "default_d")]
    pub max_disparity: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "crate::train::default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
}

pub(crate) fn default_hidden() -> usize {
    StereoConfig::default().hidden
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            steps: default_steps(),
            batch_size: default_batch(),
            iterations: default_k(),
            max_disparity: default_d(),
            gamma: default_gamma(),
            seed: 0,
            encoder: EncoderConfig::default(),
            hidden: default_hidden(),
            queue_capacity: default_queue(),
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> StereoConfig {
        StereoConfig {
            encoder: self.encoder.clone(),
            max_disparity: self.max_disparity,
            iterations: self.iterations,
            hidden: self.hidden,
            context: self.hidden,
            ..StereoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(NetError::Argument(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(NetError::Argument("batch_size must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(NetError::Argument(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.queue_capacity == 0 {
            return Err(NetError::Argument("queue_capacity must be positive".into()));
        }
        self.model_config().validate()
    }
}

/// Model, parameters and optimizer state. Single writer.
pub struct Trainer {
    model: StereoNet,
    store: ParamStore,
    optimizer: AdamW,
    gamma: f64,
    step: usize,
}

impl Trainer {
    pub fn new(model: StereoNet, store: ParamStore, lr: f64, gamma: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        };
        Ok(Trainer {
            optimizer: AdamW::new(store.vars(), params)?,
            model,
            store,
            gamma,
            step: 0,
        })
    }

    /// Fresh seeded f32 model from a training config.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(DType::F32, cfg.seed);
        let model = StereoNet::new(&mut store, cfg.model_config())?;
        Trainer::new(model, store, cfg.lr, cfg.gamma)
    }

    pub fn model(&self) -> &StereoNet {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn into_parts(self) -> (StereoNet, ParamStore) {
        (self.model, self.store)
    }

    /// Loss of the current parameters on `batch`, without updating.
    pub fn evaluate_loss(&self, batch: &[StereoSample]) -> Result<f64> {
        let [l, r, gt, mask] = batch_tensors(batch, self.model.dtype())?;
        let est = self.model.forward(&l, &r)?;
        Ok(l1_loss(&est, &gt, &mask, self.gamma)?.to_dtype(DType::F64)?.to_scalar()?)
    }

    /// One Adam step on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &[StereoSample]) -> Result<f64> {
        let [l, r, gt, mask] = batch_tensors(batch, self.model.dtype())?;
        let est = self.model.forward(&l, &r)?;
        let loss = l1_loss(&est, &gt, &mask, self.gamma)?;
        let value: f64 = loss.to_dtype(DType::F64)?.to_scalar()?;
        if !value.is_finite() {
            return Err(NetError::NonFiniteLoss { step: self.step, value });
        }
        self.optimizer.backward_step(&loss)?;
        self.step += 1;
        Ok(value)
    }
}

/// Batches produced on a background thread; at most `capacity` wait in the queue.
pub struct BatchQueue {
    rx: Option<Receiver<Vec<StereoSample>>>,
    handle: Option<JoinHandle<()>>,
}

/// Yields `count` batches of `batch_size` samples, reshuffling (seeded) every epoch.
pub fn spawn_batches(
    samples: Arc<Vec<StereoSample>>,
    batch_size: usize,
    count: usize,
    seed: u64,
    capacity: usize,
) -> Result<BatchQueue> {
    if samples.is_empty() {
        return Err(NetError::Argument("no training samples".into()));
    }
    if batch_size == 0 || capacity == 0 {
        return Err(NetError::Argument("batch size and queue capacity must be positive".into()));
    }
    let batch_size = batch_size.min(samples.len());
    let (tx, rx) = sync_channel(capacity);
    let handle = std::thread::spawn(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = Vec::new();
        for _ in 0..count {
            if order.len() < batch_size {
                let mut epoch: Vec<usize> = (0..samples.len()).collect();
                epoch.shuffle(&mut rng);
                order.extend(epoch);
            }
            let batch: Vec<StereoSample> = order.drain(..batch_size).map(|i| samples[i].clone()).collect();
            if tx.send(batch).is_err() {
                return;
            }
        }
    });
    Ok(BatchQueue {
        rx: Some(rx),
        handle: Some(handle),
    })
}

impl Iterator for BatchQueue {
    type Item = Vec<StereoSample>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for BatchQueue {
    fn drop(&mut self) {
        // closing the receiver unblocks a producer waiting on a full queue
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Runs `cfg.steps` training steps; `on_step(step, loss)` sees every loss.
pub fn train(cfg: &TrainConfig, samples: Vec<StereoSample>, mut on_step: impl FnMut(usize, f64)) -> Result<Trainer> {
    let mut trainer = Trainer::from_config(cfg)?;
    let queue = spawn_batches(Arc::new(samples), cfg.batch_size, cfg.steps, cfg.seed, cfg.queue_capacity)?;
    for (step, batch) in queue.enumerate() {
        let loss = trainer.train_step(&batch)?;
        on_step(step, loss);
    }
    Ok(trainer)
}
