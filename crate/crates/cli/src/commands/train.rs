use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stereo_core::metrics::frame_stats;
use stereo_core::{load_manifest, D1Mode, StereoSample};
use stereo_nets::{save_checkpoint, spawn_batches, StereoNet, TrainConfig, Trainer};

use crate::config::{config_error, load_document, overlay, parse, resolved, take_keys, write_echo};
use crate::TrainArgs;

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const LOG_FILE: &str = "train_log.json";

fn default_split() -> String {
    "train".into()
}

fn default_eval_every() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub data_root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    pub out_dir: PathBuf,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub target_epe: Option<f64>,
}

const RUN_KEYS: &[&str] = &["data_root", "split", "out_dir", "eval_every", "target_epe"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: usize,
    pub epe: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps_run: usize,
    pub losses: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
    pub reached_target: Option<bool>,
}

pub fn resolve(args: &TrainArgs) -> Result<(TrainRun, TrainConfig)> {
    let mut doc = load_document(args.config.as_deref())?;
    overlay(&mut doc, "data_root", args.data_root.as_ref())?;
    overlay(&mut doc, "split", args.split.as_ref())?;
    overlay(&mut doc, "out_dir", args.out_dir.as_ref())?;
    overlay(&mut doc, "eval_every", args.eval_every)?;
    overlay(&mut doc, "target_epe", args.target_epe)?;
    overlay(&mut doc, "steps", args.steps)?;
    overlay(&mut doc, "lr", args.lr)?;
    overlay(&mut doc, "batch_size", args.batch_size)?;
    overlay(&mut doc, "seed", args.seed)?;
    let run: TrainRun = parse(take_keys(&mut doc, RUN_KEYS), "train-toy")?;
    let cfg: TrainConfig = parse(doc, "train-toy")?;
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    if let Some(t) = run.target_epe {
        if !(t > 0.0 && t.is_finite()) {
            return Err(config_error(format!("target_epe must be positive, got {t}")));
        }
    }
    Ok((run, cfg))
}

/// EPE pooled over the valid pixels of every sample.
pub fn pooled_epe(model: &StereoNet, samples: &[StereoSample]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in samples {
        let pred = model.predict(s)?;
        let stats = frame_stats(pred.view(), s.disparity.view(), s.valid_mask.view(), D1Mode::And)?;
        sum += stats.abs_err_sum;
        count += stats.valid_count;
    }
    Ok(sum / count.max(1) as f64)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let (run, cfg) = resolve(&args)?;
    let manifest = load_manifest(&run.data_root, &run.split)
        .with_context(|| format!("loading training data {}", run.data_root.display()))?;
    let samples = manifest
        .entries
        .iter()
        .map(StereoSample::load)
        .collect::<stereo_core::Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(config_error(format!("no training samples in {}", manifest.split_dir().display())));
    }
    std::fs::create_dir_all(&run.out_dir).with_context(|| format!("creating {}", run.out_dir.display()))?;

    let mut trainer = Trainer::from_config(&cfg)?;
    let queue = spawn_batches(
        Arc::new(samples.clone()),
        cfg.batch_size,
        cfg.steps,
        cfg.seed,
        cfg.queue_capacity,
    )?;
    let mut log = TrainLog {
        steps_run: 0,
        losses: Vec::with_capacity(cfg.steps),
        evaluations: Vec::new(),
        reached_target: run.target_epe.map(|_| false),
    };
    let evaluate = |trainer: &Trainer, log: &mut TrainLog| -> Result<bool> {
        let epe = pooled_epe(trainer.model(), &samples)?;
        let step = trainer.steps_done();
        log::info!("step {step}: training-set EPE {epe:.4}");
        log.evaluations.push(Evaluation { step, epe });
        let hit = run.target_epe.is_some_and(|t| epe < t);
        if hit {
            log.reached_target = Some(true);
        }
        Ok(hit)
    };

    for batch in queue {
        let loss = trainer.train_step(&batch)?;
        log.losses.push(loss);
        let step = trainer.steps_done();
        if step % 50 == 0 {
            log::info!("step {step}: loss {loss:.4}");
        }
        if run.eval_every > 0 && step % run.eval_every == 0 && evaluate(&trainer, &mut log)? {
            break;
        }
    }
    log.steps_run = trainer.steps_done();
    if log.evaluations.last().map(|e| e.step) != Some(log.steps_run) {
        evaluate(&trainer, &mut log)?;
    }

    let (model, store) = trainer.into_parts();
    save_checkpoint(&model, &store, run.out_dir.join(CHECKPOINT_FILE))?;
    let text = serde_json::to_string_pretty(&log)?;
    std::fs::write(run.out_dir.join(LOG_FILE), text + "\n")?;
    write_echo(&run.out_dir, "train-toy", &resolved(&[&run, &cfg])?)?;

    let last = log.evaluations.last().map_or(f64::NAN, |e| e.epe);
    println!("trained {} steps, training-set EPE {last:.4}", log.steps_run);
    if log.reached_target == Some(false) {
        log::warn!("target EPE {:?} not reached", run.target_epe);
    }
    Ok(())
}
