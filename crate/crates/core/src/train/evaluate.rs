//! Test-split evaluation of a trained network against the bicubic baseline.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{bicubic_upsample, Dataset, SamplePair, SplitName};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, MINet, MINetParams};
use crate::parallel;
use crate::tensor::Tensor;

use super::metrics::{nmse, psnr, psnr_capped, ssim};

/// Quality of one reconstruction against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub nmse: f64,
    /// Uncapped; `+inf` for a perfect reconstruction.
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageMetrics {
    /// Both images are `[h, w]` intensities with peak 1.
    pub fn compute(pred: &Tensor, gt: &Tensor) -> Result<Self> {
        Ok(Self { nmse: nmse(pred, gt)?, psnr: psnr(pred, gt, 1.0)?, ssim: ssim(pred, gt)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub seed: u64,
    pub model: ImageMetrics,
    pub bicubic: ImageMetrics,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-metric statistics over a split. PSNR is averaged after capping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub nmse: Stat,
    pub psnr: Stat,
    pub ssim: Stat,
}

impl MetricsSummary {
    pub fn of<'a>(metrics: impl IntoIterator<Item = &'a ImageMetrics> + Clone) -> Self {
        Self {
            nmse: Stat::of(metrics.clone().into_iter().map(|m| m.nmse)),
            psnr: Stat::of(metrics.clone().into_iter().map(|m| psnr_capped(m.psnr))),
            ssim: Stat::of(metrics.into_iter().map(|m| m.ssim)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleRecord>,
    pub model: MetricsSummary,
    pub bicubic: MetricsSummary,
}

impl MetricsReport {
    pub fn from_records(samples: Vec<SampleRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("cannot summarise an empty split".into()));
        }
        let model = MetricsSummary::of(samples.iter().map(|s| &s.model));
        let bicubic = MetricsSummary::of(samples.iter().map(|s| &s.bicubic));
        Ok(Self { samples, model, bicubic })
    }

    /// One row per sample: `seed,model_nmse,model_psnr,model_ssim,bicubic_nmse,bicubic_psnr,bicubic_ssim`.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("seed,model_nmse,model_psnr,model_ssim,bicubic_nmse,bicubic_psnr,bicubic_ssim\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.seed, s.model.nmse, s.model.psnr, s.model.ssim, s.bicubic.nmse, s.bicubic.psnr, s.bicubic.ssim
            );
        }
        out
    }

    /// `method,nmse_mean,nmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,nmse_mean,nmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for (name, m) in [("model", &self.model), ("bicubic", &self.bicubic)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                m.nmse.mean, m.nmse.std, m.psnr.mean, m.psnr.std, m.ssim.mean, m.ssim.std
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>20} {:>18} {:>18}\n", "method", "NMSE", "PSNR (dB)", "SSIM");
        for (name, m) in [("model", &self.model), ("bicubic", &self.bicubic)] {
            let _ = writeln!(
                out,
                "{name:<8} {:>20} {:>18} {:>18}",
                format!("{:.5} ± {:.5}", m.nmse.mean, m.nmse.std),
                format!("{:.3} ± {:.3}", m.psnr.mean, m.psnr.std),
                format!("{:.4} ± {:.4}", m.ssim.mean, m.ssim.std),
            );
        }
        let _ = writeln!(out, "samples: {}", self.samples.len());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [
            ("metrics_samples.csv", self.samples_csv()),
            ("metrics.csv", self.summary_csv()),
            ("metrics.txt", self.table()),
        ] {
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Restricts an image to the valid intensity range before scoring.
pub fn clamp_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Super-resolved T2 for one sample, `[rN, rN]`, clamped to `[0, 1]`.
pub fn super_resolve(net: &MINet, params: &MINetParams, sample: &SamplePair) -> Result<Tensor> {
    let hr = sample.x_t2.shape().to_vec();
    let lr = sample.y_t2.shape();
    let x_t1 = sample.x_t1.reshaped(&[1, 1, hr[0], hr[1]])?;
    let y_t2 = sample.y_t2.reshaped(&[1, 1, lr[0], lr[1]])?;
    let (sr, _) = net.predict(params, &x_t1, &y_t2)?;
    Ok(clamp_unit(&sr.reshaped(&hr)?))
}

/// Bicubic baseline for one sample, clamped to `[0, 1]`.
pub fn bicubic_baseline(sample: &SamplePair) -> Result<Tensor> {
    Ok(clamp_unit(&bicubic_upsample(&sample.y_t2, sample.scale())?))
}

/// Scores the network and the bicubic baseline on every sample, in parallel.
pub fn evaluate_samples(net: &MINet, params: &MINetParams, samples: &[SamplePair]) -> Result<MetricsReport> {
    if let Some(s) = samples.iter().find(|s| s.scale() != net.config.scale) {
        return Err(Error::Config(format!(
            "model upscales by {} but sample {} has scale {}",
            net.config.scale,
            s.seed,
            s.scale()
        )));
    }
    let records = parallel::map_slice(samples, |s| {
        let sr = super_resolve(net, params, s)?;
        let bic = bicubic_baseline(s)?;
        let model = ImageMetrics::compute(&sr, &s.x_t2)?;
        let bicubic = ImageMetrics::compute(&bic, &s.x_t2)?;
        if !(model.nmse.is_finite() && model.ssim.is_finite()) {
            return Err(Error::Numerical(format!("non-finite metrics on sample {}", s.seed)));
        }
        Ok(SampleRecord { seed: s.seed, model, bicubic })
    });
    MetricsReport::from_records(records.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Loads a checkpoint's network and scores it on one split of `dataset`.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, split: SplitName) -> Result<MetricsReport> {
    let net = MINet::from_kv(&checkpoint.config)?;
    checkpoint.params.check_manifest(&net.config, net.variant)?;
    let samples = dataset.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Input(format!("split {split} is empty")));
    }
    evaluate_samples(&net, &checkpoint.params, &samples)
}
