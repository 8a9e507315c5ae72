use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stereo_core::image::{encode_rgb_png, load_rgb, pad_to_multiple};
use stereo_nets::inspect::{pca_rgb, scale_stats, ScaleStats};
use stereo_nets::{load_checkpoint, DType, EncoderConfig, ParamStore, RobustEncoder};

use crate::config::{load_document, overlay, parse, write_echo};
use crate::InspectArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectRun {
    pub image: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Weight seed when no checkpoint is given.
    #[serde(default)]
    pub seed: u64,
    /// Encoder layout when no checkpoint is given.
    #[serde(default)]
    pub encoder: EncoderConfig,
}

pub fn resolve(args: &InspectArgs) -> Result<InspectRun> {
    let mut doc = load_document(args.config.as_deref())?;
    overlay(&mut doc, "image", args.image.as_ref())?;
    overlay(&mut doc, "checkpoint", args.checkpoint.as_ref())?;
    overlay(&mut doc, "out_dir", args.out_dir.as_ref())?;
    overlay(&mut doc, "seed", args.seed)?;
    parse(doc, "inspect-features")
}

#[derive(Serialize)]
struct StatsDoc {
    image: PathBuf,
    height: usize,
    width: usize,
    /// Size after edge padding to a multiple of 32.
    padded: [usize; 2],
    scales: Vec<ScaleStats>,
}

pub fn run(args: InspectArgs) -> Result<()> {
    let run = resolve(&args)?;
    let img = load_rgb(&run.image)?;
    let (_, h, w) = img.dim();
    let padded = pad_to_multiple(img.view(), 32);
    let (_, ph, pw) = padded.dim();

    let features = match &run.checkpoint {
        Some(ckpt) => {
            let (model, _) = load_checkpoint(ckpt, DType::F32)?;
            model.encoder().encode_image(padded.view())?
        }
        None => {
            let mut store = ParamStore::new(DType::F32, run.seed);
            let encoder = RobustEncoder::new(&mut store, "encoder", run.encoder.clone())?;
            encoder.encode_image(padded.view())?
        }
    };

    std::fs::create_dir_all(&run.out_dir).with_context(|| format!("creating {}", run.out_dir.display()))?;
    let mut scales = Vec::new();
    for (scale, f) in features.to_arrays(0)? {
        scales.push(scale_stats(scale, f.view()));
        let png = encode_rgb_png(pca_rgb(f.view()).view())?;
        let path = run.out_dir.join(format!("pca_s{scale}.png"));
        std::fs::write(&path, png).with_context(|| format!("writing {}", path.display()))?;
    }
    let doc = StatsDoc {
        image: run.image.clone(),
        height: h,
        width: w,
        padded: [ph, pw],
        scales,
    };
    std::fs::write(run.out_dir.join("stats.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    write_echo(&run.out_dir, "inspect-features", &serde_json::to_value(&run)?)?;
    for s in &doc.scales {
        println!(
            "scale {:>2}: {:>3} x {:>3} x {:>3}  mean {:+.4}  std {:.4}  top-3 PCA variance {:.3}",
            s.scale, s.channels, s.height, s.width, s.mean, s.std, s.top3_variance
        );
    }
    Ok(())
}
