//! Seeded training runs with best-on-validation checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::data::split::splitmix64;
use crate::data::{Dataset, SamplePair, SplitName};
use crate::error::{Error, Result};
use crate::model::{Batch, Checkpoint, MINet, MINetConfig, MINetParams, Variant};
use crate::tensor::Tensor;

use super::adam::AdamState;
use super::evaluate::evaluate_samples;

pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 4;
/// Learning rate for desk-scale runs.
pub const DEFAULT_LR: f64 = 1e-3;
/// Learning rate for full-scale data; too slow to make progress on small phantom sets.
pub const FULL_SCALE_LR: f64 = 5e-5;

pub const CHECKPOINT_FILE: &str = "checkpoint.mint";
pub const LOSS_CSV: &str = "loss.csv";
pub const VAL_CSV: &str = "val.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Dataset root as written by `generate_dataset`.
    pub data: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub variant: Variant,
    pub model: MINetConfig,
}

impl TrainConfig {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            seed: 0,
            variant: Variant::Full,
            model: MINetConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.model.validate()
    }

    /// Model keys plus `data`, `epochs`, `batch_size`, `lr`, `seed` and `variant`.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.model.write_kv(&mut kv);
        kv.set("data", self.data.display());
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("seed", self.seed);
        kv.set("variant", self.variant);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let data = kv
            .get_str("data")
            .ok_or_else(|| Error::Config("missing key data (dataset root)".into()))?;
        let cfg = Self {
            data: PathBuf::from(data),
            epochs: kv.get_or("epochs", DEFAULT_EPOCHS)?,
            batch_size: kv.get_or("batch_size", DEFAULT_BATCH_SIZE)?,
            lr: kv.get_or("lr", DEFAULT_LR)?,
            seed: kv.get_or("seed", 0)?,
            variant: kv.get_or("variant", Variant::Full)?,
            model: MINetConfig::from_kv(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the canonical key=value text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().to_text().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Directory name for this run: `<variant>-<hash>`.
    pub fn run_name(&self) -> String {
        format!("{}-{}", self.variant, self.hash())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_psnr: f64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Loss after every optimiser step, in order.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
    /// 1-based epoch whose parameters are in `checkpoint`.
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{},{l}", i + 1);
        }
        out
    }

    pub fn val_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_psnr\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.mean_loss, e.val_psnr);
        }
        out
    }

    /// Writes the best checkpoint and both CSV logs into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        for (file, text) in [(LOSS_CSV, self.loss_csv()), (VAL_CSV, self.val_csv())] {
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Stacks samples into a `[B, 1, H, W]` batch.
pub fn make_batch(samples: &[&SamplePair]) -> Result<Batch> {
    let stack = |f: fn(&SamplePair) -> &Tensor| -> Result<Tensor> {
        let parts = samples
            .iter()
            .map(|s| {
                let t = f(s);
                t.reshaped(&[1, 1, t.shape()[0], t.shape()[1]])
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack_axis0(&parts)
    };
    Ok(Batch { x_t1: stack(|s| &s.x_t1)?, y_t2: stack(|s| &s.y_t2)?, x_t2: stack(|s| &s.x_t2)? })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// Trains on the dataset's train split, calling `on_epoch` after each
/// validation pass.
pub fn train_with(cfg: &TrainConfig, on_epoch: impl FnMut(&EpochSummary)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = Dataset::open(&cfg.data)?;
    if dataset.scale() != cfg.model.scale {
        return Err(Error::Config(format!(
            "model scale {} does not match dataset scale {}",
            cfg.model.scale,
            dataset.scale()
        )));
    }
    let train_set = dataset.load_split(SplitName::Train)?;
    let val_set = dataset.load_split(SplitName::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("training needs non-empty train and val splits".into()));
    }
    train_on(cfg, &train_set, &val_set, on_epoch)
}

/// Training loop over in-memory splits.
pub fn train_on(
    cfg: &TrainConfig,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let net = MINet::new(cfg.model.clone(), cfg.variant)?;
    let mut params = net.init_params(cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7368_7566));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, MINetParams)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&SamplePair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = make_batch(&members)?;
            let step = net.step(&params, &batch).map_err(|e| diagnose(e, epoch, losses.len() + 1, &losses))?;
            adam.step(params.iter_mut(), &step.grads)?;
            if !params.all_finite() {
                return Err(diagnose(
                    Error::Numerical("parameters became non-finite after the update".into()),
                    epoch,
                    losses.len() + 1,
                    &losses,
                ));
            }
            losses.push(step.loss);
            epoch_loss += step.loss;
            steps += 1;
        }
        let val_psnr = evaluate_samples(&net, &params, val_set)?.model.psnr.mean;
        let summary = EpochSummary { epoch, mean_loss: epoch_loss / steps as f64, val_psnr, elapsed: start.elapsed() };
        on_epoch(&summary);
        epochs.push(summary);
        // strict improvement keeps the earliest epoch on ties
        if best.as_ref().is_none_or(|(_, p, _)| val_psnr > *p) {
            best = Some((epoch, val_psnr, params.clone()));
        }
    }
    let (best_epoch, best_val_psnr, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        losses,
        epochs,
        best_epoch,
        best_val_psnr,
        checkpoint: Checkpoint { config: cfg.to_kv(), params: best_params },
    })
}

fn diagnose(err: Error, epoch: usize, step: usize, losses: &[f64]) -> Error {
    match err {
        Error::Numerical(msg) => {
            let recent: Vec<String> = losses.iter().rev().take(5).rev().map(|l| format!("{l:.6}")).collect();
            Error::Numerical(format!("{msg} at epoch {epoch}, step {step}; recent losses [{}]", recent.join(", ")))
        }
        other => other,
    }
}
