use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stereo_core::{evaluate, load_manifest, D1Mode, EvalReport, PredictionDir, Weighting};
use stereo_nets::{load_checkpoint, DType};

use crate::config::{config_error, load_document, overlay, parse, write_echo};
use crate::EvalArgs;

fn default_split() -> String {
    "test".into()
}

fn default_out() -> PathBuf {
    "report.json".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    #[serde(default)]
    pub pred_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub gt_root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default)]
    pub d1_mode: D1Mode,
    #[serde(default)]
    pub frame_weighted: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

pub fn resolve(args: &EvalArgs) -> Result<EvalRun> {
    let mut doc = load_document(args.config.as_deref())?;
    overlay(&mut doc, "pred_dir", args.pred_dir.as_ref())?;
    overlay(&mut doc, "checkpoint", args.checkpoint.as_ref())?;
    overlay(&mut doc, "gt_root", args.gt_root.as_ref())?;
    overlay(&mut doc, "split", args.split.as_ref())?;
    if let Some(m) = &args.d1_mode {
        let mode: D1Mode = m.parse().map_err(|e: stereo_core::CoreError| config_error(e.to_string()))?;
        overlay(&mut doc, "d1_mode", Some(mode))?;
    }
    if args.frame_weighted {
        overlay(&mut doc, "frame_weighted", Some(true))?;
    }
    overlay(&mut doc, "out", args.out.as_ref())?;
    let run: EvalRun = parse(doc, "eval")?;
    if run.pred_dir.is_some() == run.checkpoint.is_some() {
        return Err(config_error("give exactly one of pred_dir or checkpoint"));
    }
    Ok(run)
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let run = resolve(&args)?;
    let manifest = load_manifest(&run.gt_root, &run.split)
        .with_context(|| format!("loading ground truth {}", run.gt_root.display()))?;
    let outcome = match (&run.pred_dir, &run.checkpoint) {
        (Some(dir), _) => evaluate(&PredictionDir::new(dir), &manifest, run.d1_mode),
        (_, Some(ckpt)) => {
            let (model, _) = load_checkpoint(ckpt, DType::F32)?;
            evaluate(&model, &manifest, run.d1_mode)
        }
        _ => unreachable!("checked in resolve"),
    };
    let weighting = if run.frame_weighted {
        Weighting::Frame
    } else {
        Weighting::Pixel
    };
    let report = EvalReport::build(outcome, run.d1_mode, weighting);
    let out_dir = parent_dir(&run.out);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    report.write_json(&run.out)?;
    write_echo(out_dir, "eval", &serde_json::to_value(&run)?)?;

    for f in &report.failures {
        log::warn!("frame {} excluded: {}", f.id, f.reason);
    }
    match &report.report {
        Some(table) => {
            print!("{}", table.to_table());
            Ok(())
        }
        None => Err(anyhow::anyhow!(
            "no frame could be evaluated ({} failures, see {})",
            report.failures.len(),
            run.out.display()
        )),
    }
}
