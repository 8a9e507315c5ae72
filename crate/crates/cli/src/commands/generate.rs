use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stereo_core::load_manifest;
use stereo_datagen::{parse_conditions, run_pipeline, BackendKind, Backends, GenerationConfig, WeatherCondition};

use crate::config::{config_error, load_document, overlay, parse, resolved, take_keys, write_echo};
use crate::GenerateArgs;

fn default_split() -> String {
    "train".into()
}

fn all_conditions() -> Vec<WeatherCondition> {
    WeatherCondition::ALL.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRun {
    pub src_root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    pub out_root: PathBuf,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<WeatherCondition>,
}

const RUN_KEYS: &[&str] = &["src_root", "split", "out_root", "conditions"];

pub fn resolve(args: &GenerateArgs) -> Result<(GenerateRun, GenerationConfig)> {
    let mut doc = load_document(args.config.as_deref())?;
    overlay(&mut doc, "src_root", args.src_root.as_ref())?;
    overlay(&mut doc, "split", args.split.as_ref())?;
    overlay(&mut doc, "out_root", args.out_root.as_ref())?;
    if let Some(list) = &args.conditions {
        let parsed = parse_conditions(list).map_err(|e| config_error(e.to_string()))?;
        overlay(&mut doc, "conditions", Some(parsed))?;
    }
    overlay(&mut doc, "seed", args.seed)?;
    overlay(&mut doc, "steps", args.steps)?;
    overlay(&mut doc, "workers", args.workers)?;

    let run: GenerateRun = parse(take_keys(&mut doc, RUN_KEYS), "generate")?;
    let mut cfg: GenerationConfig = parse(doc, "generate")?;
    if let Some(b) = &args.backend {
        let kind = match b.as_str() {
            "mock" => BackendKind::Mock,
            "real" | "http" => BackendKind::Http,
            other => return Err(config_error(format!("--backend must be mock or real, got {other:?}"))),
        };
        cfg.backends.set_kind(kind);
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    if run.conditions.is_empty() {
        return Err(config_error("conditions must not be empty"));
    }
    Ok((run, cfg))
}

pub fn run(args: GenerateArgs) -> Result<()> {
    let (run, cfg) = resolve(&args)?;
    let manifest = load_manifest(&run.src_root, &run.split)
        .with_context(|| format!("loading source dataset {}", run.src_root.display()))?;
    let backends = Backends::from_config(&cfg.backends)?;
    log::info!(
        "generating {} samples x {} conditions into {}",
        manifest.len(),
        run.conditions.len(),
        run.out_root.display()
    );
    let report = run_pipeline(&manifest, &run.conditions, &cfg, &backends, &run.out_root)?;
    write_echo(&run.out_root, "generate", &resolved(&[&run, &cfg])?)?;
    println!(
        "generated {} of {} pairs ({} skipped) into {}",
        report.generated,
        report.requested,
        report.skipped_count,
        run.out_root.display()
    );
    Ok(())
}
