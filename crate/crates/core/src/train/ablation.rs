//! Trains every architecture variant on the same data and seed and tabulates
//! their test metrics.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Dataset, SplitName};
use crate::error::{Error, Result};
use crate::model::{MINet, Variant};

use super::evaluate::{evaluate_samples, MetricsReport, Stat};
use super::trainer::{train_on, TrainConfig, TrainOutcome};

/// Row order of the comparison table: each removed component, then the full network.
pub const ABLATION_ORDER: [Variant; 4] = [Variant::NoAux, Variant::NoInt, Variant::NoAtt, Variant::Full];

pub const ABLATION_MD: &str = "ablation.md";
pub const ABLATION_CSV: &str = "ablation.csv";

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::NoAux => "w/o auxiliary T1 branch",
        Variant::NoInt => "w/o multi-stage integration",
        Variant::NoAtt => "w/o channel-spatial attention",
        Variant::Full => "full",
    }
}

fn cell(s: &Stat, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, s.mean, digits, s.std)
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn markdown(&self) -> String {
        let mut out = String::from("| Variant | NMSE | PSNR (dB) | SSIM |\n|---|---|---|---|\n");
        for r in &self.rows {
            let m = &r.report.model;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                variant_label(r.variant),
                cell(&m.nmse, 5),
                cell(&m.psnr, 3),
                cell(&m.ssim, 4)
            );
        }
        out
    }

    /// `variant,nmse_mean,nmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std,best_epoch`.
    pub fn csv(&self) -> String {
        let mut out = String::from("variant,nmse_mean,nmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std,best_epoch\n");
        for r in &self.rows {
            let m = &r.report.model;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant, m.nmse.mean, m.nmse.std, m.psnr.mean, m.psnr.std, m.ssim.mean, m.ssim.std, r.best_epoch
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [(ABLATION_MD, self.markdown()), (ABLATION_CSV, self.csv())] {
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Trains the four variants with `base`'s data, seed and hyperparameters and
/// evaluates each best checkpoint on the test split. `on_run` sees every
/// finished run, e.g. to persist it.
pub fn run_ablation(
    base: &TrainConfig,
    mut on_run: impl FnMut(&TrainConfig, &TrainOutcome, &MetricsReport) -> Result<()>,
) -> Result<AblationTable> {
    let dataset = Dataset::open(&base.data)?;
    let train_set = dataset.load_split(SplitName::Train)?;
    let val_set = dataset.load_split(SplitName::Val)?;
    let test_set = dataset.load_split(SplitName::Test)?;
    if train_set.is_empty() || val_set.is_empty() || test_set.is_empty() {
        return Err(Error::Input("ablation needs non-empty train, val and test splits".into()));
    }
    let mut rows = Vec::with_capacity(ABLATION_ORDER.len());
    for variant in ABLATION_ORDER {
        let cfg = TrainConfig { variant, ..base.clone() };
        let outcome = train_on(&cfg, &train_set, &val_set, |_| {})?;
        let net = MINet::new(cfg.model.clone(), variant)?;
        let report = evaluate_samples(&net, &outcome.checkpoint.params, &test_set)?;
        on_run(&cfg, &outcome, &report)?;
        rows.push(AblationRow { variant, best_epoch: outcome.best_epoch, report });
    }
    Ok(AblationTable { rows })
}
