//! `export-figures`: loss curve, error maps and comparison panels for a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use minet_core::data::sample::write_pgm;
use minet_core::data::{Dataset, SplitName};
use minet_core::figures::{hstack, plot_curve, smooth, upscale_nearest};
use minet_core::model::{Checkpoint, MINet};
use minet_core::train::evaluate::{bicubic_baseline, super_resolve};
use minet_core::train::trainer::{CHECKPOINT_FILE, LOSS_CSV};
use minet_core::train::{error_map, psnr};

use crate::manifest::RunManifest;

pub const FIGURES_DIR: &str = "figures";
const CURVE_WIDTH: usize = 512;
const CURVE_HEIGHT: usize = 256;
const SMOOTHING: f64 = 0.1;
const PANEL_GAP: usize = 4;

fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut losses = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let Some((_, loss)) = line.split_once(',') else {
            bail!("{}:{}: expected step,loss", path.display(), i + 1);
        };
        losses.push(loss.trim().parse().with_context(|| format!("{}:{}: bad loss", path.display(), i + 1))?);
    }
    if losses.is_empty() {
        bail!("{} holds no losses", path.display());
    }
    Ok(losses)
}

pub fn export(run: &Path, data: Option<PathBuf>, samples: usize) -> Result<()> {
    let start = Instant::now();
    let checkpoint = Checkpoint::load(&run.join(CHECKPOINT_FILE))?;
    let net = MINet::from_kv(&checkpoint.config)?;
    let data = match data {
        Some(d) => d,
        None => PathBuf::from(checkpoint.config.get_str("data").context("checkpoint does not record its dataset; pass --data")?),
    };
    let dataset = Dataset::open(&data)?;
    let out = run.join(FIGURES_DIR);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut artifacts = Vec::new();

    let losses = read_losses(&run.join(LOSS_CSV))?;
    let smoothed = smooth(&losses, SMOOTHING);
    write_pgm(&out.join("loss_curve.pgm"), &plot_curve(&smoothed, CURVE_WIDTH, CURVE_HEIGHT, true)?)?;
    let mut csv = String::from("step,loss,smoothed\n");
    for (i, (l, s)) in losses.iter().zip(&smoothed).enumerate() {
        let _ = writeln!(csv, "{},{l},{s}", i + 1);
    }
    std::fs::write(out.join("loss_curve.csv"), csv)?;
    artifacts.extend(["loss_curve.pgm", "loss_curve.csv"].map(String::from));

    let test = dataset.load_split(SplitName::Test)?;
    let mut errors = String::from("seed,model_mae,bicubic_mae,model_psnr,bicubic_psnr\n");
    for s in test.iter().take(samples) {
        let sr = super_resolve(&net, &checkpoint.params, s)?;
        let bic = bicubic_baseline(s)?;
        let lr = upscale_nearest(&s.y_t2, s.scale())?;
        let mae = |img: &minet_core::Tensor| -> Result<f64> {
            let d = img.zip_map(&s.x_t2, |a, b| (a - b).abs())?;
            Ok(d.sum() / d.len() as f64)
        };
        let _ = writeln!(
            errors,
            "{},{},{},{},{}",
            s.seed,
            mae(&sr)?,
            mae(&bic)?,
            psnr(&sr, &s.x_t2, 1.0)?,
            psnr(&bic, &s.x_t2, 1.0)?
        );
        let files = [
            (format!("sample_{}_panel.pgm", s.seed), hstack(&[lr, bic.clone(), sr.clone(), s.x_t2.clone()], PANEL_GAP)?),
            (format!("sample_{}_error_model.pgm", s.seed), error_map(&sr, &s.x_t2)?),
            (format!("sample_{}_error_bicubic.pgm", s.seed), error_map(&bic, &s.x_t2)?),
        ];
        for (name, img) in files {
            write_pgm(&out.join(&name), &img)?;
            artifacts.push(name);
        }
    }
    std::fs::write(out.join("errors.csv"), errors)?;
    artifacts.push("errors.csv".into());

    let mut cfg = checkpoint.config.clone();
    cfg.set("run", run.display());
    cfg.set("samples", samples);
    let mut manifest = RunManifest::new("export-figures", cfg, checkpoint.config.get("seed")?);
    manifest.artifacts = artifacts;
    manifest.duration = start.elapsed();
    manifest.write(&out)?;
    println!("figures written to {} (panels: LR | bicubic | SR | GT)", out.display());
    Ok(())
}
