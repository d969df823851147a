mod figures;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{error::ErrorKind, Parser, Subcommand};
use minet_core::config::KeyValues;
use minet_core::data::{generate_dataset, Dataset, DatasetConfig, DegradeMethod, SampleSpec, SplitName};
use minet_core::gradcheck::suite::run_selection;
use minet_core::gradcheck::GradCheckOptions;
use minet_core::model::{Checkpoint, Variant};
use minet_core::train::trainer::{CHECKPOINT_FILE, LOSS_CSV, VAL_CSV};
use minet_core::train::{evaluate, run_ablation, train_with, TrainConfig};

use manifest::RunManifest;

/// Overrides the default output root (`./runs`).
const RUN_ROOT_ENV: &str = "MINET_RUN_ROOT";

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "minet", version, about = "Multi-contrast MRI super-resolution on synthetic phantoms")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired T1/T2 phantom dataset with a 7:1:2 split.
    GenData {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// High-resolution side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DegradeMethod::KspaceTruncation)]
        degrade: DegradeMethod,
        /// Output directory; defaults to a name derived from the arguments under the run root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one network variant and keep the best checkpoint on validation PSNR.
    Train {
        /// key=value config file (data, epochs, batch_size, lr, seed, variant, model keys).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate; 5e-5 reproduces the full-scale setting.
        #[arg(long)]
        lr: Option<f64>,
        /// Extra key=value overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory; defaults to `<run root>/<variant>-<config hash>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint and the bicubic baseline on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Dataset root; defaults to the one the checkpoint was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write the metrics; defaults to `eval_<split>` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train all four variants on shared data and seed and tabulate their test metrics.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks: `ops`, `modules`, `all` or one check name.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Loss curve, error maps and LR/bicubic/SR/GT panels for a training run.
    ExportFigures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test samples to render.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn main() -> ExitCode {
    minet_core::alloc::retain_freed_memory();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            // clap prints help to stdout and errors (including the bare usage) to stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<minet_core::Error>().is_some_and(|e| e.is_numerical()));
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { count, size, scale, seed, degrade, out } => {
            gen_data(DatasetConfig { count, sample: SampleSpec { size, scale, method: degrade }, seed }, out)
        }
        Command::Train { config, variant, data, seed, epochs, lr, overrides, out } => {
            let mut kv = load_config(config.as_deref())?;
            apply_flags(&mut kv, data, seed, epochs, lr, &overrides)?;
            if let Some(v) = variant {
                kv.set("variant", v);
            }
            train_cmd(TrainConfig::from_kv(&kv)?, out)
        }
        Command::Eval { checkpoint, split, data, out } => eval_cmd(&checkpoint, split, data, out),
        Command::Ablate { config, data, seed, epochs, lr, overrides, out } => {
            let mut kv = load_config(config.as_deref())?;
            apply_flags(&mut kv, data, seed, epochs, lr, &overrides)?;
            ablate_cmd(TrainConfig::from_kv(&kv)?, out)
        }
        Command::Gradcheck { module, seed } => gradcheck_cmd(&module, seed),
        Command::ExportFigures { run, data, samples } => figures::export(&run, data, samples),
    }
}

fn load_config(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => Ok(KeyValues::load(p)?),
        None => Ok(KeyValues::new()),
    }
}

fn apply_flags(
    kv: &mut KeyValues,
    data: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    overrides: &[String],
) -> Result<()> {
    if let Some(d) = data {
        kv.set("data", d.display());
    }
    if let Some(s) = seed {
        kv.set("seed", s);
    }
    if let Some(e) = epochs {
        kv.set("epochs", e);
    }
    if let Some(l) = lr {
        kv.set("lr", l);
    }
    for o in overrides {
        kv.apply_override(o)?;
    }
    Ok(())
}

fn gen_data(cfg: DatasetConfig, out: Option<PathBuf>) -> Result<()> {
    let start = Instant::now();
    let out = out.unwrap_or_else(|| {
        run_root().join(format!(
            "data-n{}-s{}-x{}-{}-seed{}",
            cfg.count, cfg.sample.size, cfg.sample.scale, cfg.sample.method, cfg.seed
        ))
    });
    let split = generate_dataset(&out, &cfg)?;
    let mut manifest = RunManifest::new("gen-data", cfg.to_kv(), Some(cfg.seed));
    manifest.artifacts = ["dataset.cfg", "train/", "val/", "test/", "preview/"].map(String::from).to_vec();
    manifest.duration = start.elapsed();
    manifest.write(&out)?;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        split.total(),
        out.display(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn train_cmd(cfg: TrainConfig, out: Option<PathBuf>) -> Result<()> {
    let start = Instant::now();
    let out = out.unwrap_or_else(|| run_root().join(cfg.run_name()));
    eprintln!("training {} (seed {}) into {}", cfg.variant, cfg.seed, out.display());
    let outcome = train_with(&cfg, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val psnr {:.3} dB  [{:.0}s]",
            e.epoch,
            e.mean_loss,
            e.val_psnr,
            e.elapsed.as_secs_f64()
        )
    })?;
    outcome.write(&out)?;
    let mut manifest = RunManifest::new("train", cfg.to_kv(), Some(cfg.seed));
    manifest.artifacts = [CHECKPOINT_FILE, LOSS_CSV, VAL_CSV].map(String::from).to_vec();
    manifest.duration = start.elapsed();
    manifest.write(&out)?;
    println!(
        "best epoch {} with val psnr {:.3} dB; checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_psnr,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn eval_cmd(checkpoint_path: &Path, split: SplitName, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let start = Instant::now();
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let data = match data {
        Some(d) => d,
        None => PathBuf::from(
            checkpoint.config.get_str("data").context("checkpoint does not record its dataset; pass --data")?,
        ),
    };
    let dataset = Dataset::open(&data)?;
    let report = evaluate(&checkpoint, &dataset, split)?;
    let out = out.unwrap_or_else(|| {
        checkpoint_path.parent().unwrap_or(Path::new(".")).join(format!("eval_{split}"))
    });
    report.write(&out)?;
    let mut cfg = checkpoint.config.clone();
    cfg.set("data", data.display());
    cfg.set("split", split);
    cfg.set("checkpoint", checkpoint_path.display());
    let mut manifest = RunManifest::new("eval", cfg, checkpoint.config.get("seed")?);
    manifest.artifacts = ["metrics.csv", "metrics_samples.csv", "metrics.txt"].map(String::from).to_vec();
    manifest.duration = start.elapsed();
    manifest.write(&out)?;
    print!("{}", report.table());
    Ok(())
}

fn ablate_cmd(base: TrainConfig, out: Option<PathBuf>) -> Result<()> {
    let start = Instant::now();
    let out = out.unwrap_or_else(|| run_root().join(format!("ablation-{}", base.hash())));
    let mut runs = Vec::new();
    let table = run_ablation(&base, |cfg, outcome, report| {
        let dir = out.join(cfg.variant.as_str());
        outcome.write(&dir)?;
        report.write(&dir)?;
        eprintln!("{}: test psnr {:.3} dB", cfg.variant, report.model.psnr.mean);
        runs.push((dir, cfg.clone()));
        Ok(())
    })?;
    for (dir, cfg) in runs {
        let mut m = RunManifest::new("ablate", cfg.to_kv(), Some(cfg.seed));
        m.artifacts = [CHECKPOINT_FILE, LOSS_CSV, VAL_CSV, "metrics.csv", "metrics_samples.csv", "metrics.txt"]
            .map(String::from)
            .to_vec();
        m.write(&dir)?;
    }
    table.write(&out)?;
    let mut manifest = RunManifest::new("ablate", base.to_kv(), Some(base.seed));
    manifest.artifacts = ["ablation.md", "ablation.csv"]
        .into_iter()
        .map(String::from)
        .chain(Variant::ALL.iter().map(|v| format!("{v}/")))
        .collect();
    manifest.duration = start.elapsed();
    manifest.write(&out)?;
    print!("{}", table.markdown());
    Ok(())
}

fn gradcheck_cmd(selection: &str, seed: Option<u64>) -> Result<()> {
    let mut opts = GradCheckOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    let entries = run_selection(selection, &opts)?;
    let mut failed = Vec::new();
    for e in &entries {
        let r = &e.report;
        let verdict = if e.passes() { "ok" } else { "FAIL" };
        println!(
            "{:<18} max rel err {:.3e}  (tol {:.0e}, {} coords, {} skipped at kinks)  {verdict}",
            r.name,
            r.max_rel_error(),
            e.tolerance,
            r.checks.len(),
            r.total_skipped()
        );
        if !e.passes() {
            failed.push(r.name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(minet_core::Error::Numerical(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_values() {
        let mut kv = KeyValues::parse("data = a\nseed = 1\nlr = 0.5\n").unwrap();
        apply_flags(&mut kv, Some("b".into()), Some(9), None, None, &["epochs=3".into()]).unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.data, PathBuf::from("b"));
        assert_eq!((cfg.seed, cfg.epochs, cfg.lr), (9, 3, 0.5));
        let bad = apply_flags(&mut kv, None, None, None, None, &["nonsense".into()]);
        assert!(bad.unwrap_err().to_string().contains("key=value"));
    }
}
