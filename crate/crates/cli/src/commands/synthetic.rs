use std::path::PathBuf;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use stereo_core::{make_synthetic, DisparityPattern};

use crate::config::{config_error, load_document, overlay, parse, write_echo};
use crate::SynthArgs;

fn default_split() -> String {
    "train".into()
}

fn default_count() -> usize {
    10
}

fn default_resolution() -> [usize; 2] {
    [96, 192]
}

fn default_pattern() -> String {
    "mixed:16".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    pub out_root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default = "default_count")]
    pub count: usize,
    /// `[height, width]`
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default = "default_pattern")]
    pub pattern: String,
    #[serde(default)]
    pub seed: u64,
}

fn parse_resolution(s: &str) -> Result<[usize; 2]> {
    let bad = || config_error(format!("resolution must look like 96x192, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok([h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?])
}

pub fn resolve(args: &SynthArgs) -> Result<SynthRun> {
    let mut doc = load_document(args.config.as_deref())?;
    overlay(&mut doc, "out_root", args.out_root.as_ref())?;
    overlay(&mut doc, "split", args.split.as_ref())?;
    overlay(&mut doc, "count", args.count)?;
    if let Some(r) = &args.resolution {
        overlay(&mut doc, "resolution", Some(parse_resolution(r)?))?;
    }
    overlay(&mut doc, "pattern", args.pattern.as_ref())?;
    overlay(&mut doc, "seed", args.seed)?;
    parse(doc, "make-synthetic")
}

pub fn run(args: SynthArgs) -> Result<()> {
    let run = resolve(&args)?;
    let pattern: DisparityPattern = run.pattern.parse().map_err(|e: stereo_core::CoreError| config_error(e.to_string()))?;
    let [h, w] = run.resolution;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(config_error(format!("resolution {h}x{w} must be a nonzero multiple of 32")));
    }
    let manifest = make_synthetic(&run.out_root, &run.split, run.count, (h, w), &pattern, run.seed)?;
    write_echo(&run.out_root, "make-synthetic", &serde_json::to_value(&run)?)?;
    println!(
        "wrote {} pairs ({h}x{w}, {}) to {}",
        manifest.len(),
        run.pattern,
        manifest.split_dir().display()
    );
    Ok(())
}
