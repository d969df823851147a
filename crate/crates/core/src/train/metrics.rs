//! Image quality metrics: NMSE, PSNR and windowed SSIM.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tables print identical images at this value instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sq_err(pred: &Tensor, gt: &Tensor) -> f64 {
    pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g) * (p - g)).sum()
}

/// `||pred - gt||² / ||gt||²`.
pub fn nmse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape("nmse", pred, gt)?;
    let norm: f64 = gt.data().iter().map(|g| g * g).sum();
    if norm == 0.0 {
        return Err(Error::Input("nmse: ground truth has zero norm".into()));
    }
    Ok(sq_err(pred, gt) / norm)
}

pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape("mse", pred, gt)?;
    if gt.is_empty() {
        return Err(Error::Input("mse: empty images".into()));
    }
    Ok(sq_err(pred, gt) / gt.len() as f64)
}

/// `10 log10(peak² / MSE)`; identical images give `+inf`.
pub fn psnr(pred: &Tensor, gt: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// PSNR value as shown in tables and averaged in reports.
pub fn psnr_capped(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully-contained 11x11 windows of two `[h, w]` images.
pub fn ssim(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_shape("ssim", pred, gt)?;
    let &[h, w] = gt.shape() else {
        return Err(Error::shape("ssim", format!("expected a single-channel 2-D image, got {:?}", gt.shape())));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!("ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let (x, y) = (pred.data(), gt.data());
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my) = (0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                let row = (oy + dy) * w + ox;
                for (dx, gx) in g.iter().enumerate() {
                    let wt = gy * gx;
                    mx += wt * x[row + dx];
                    my += wt * y[row + dx];
                }
            }
            // central second moments in a second pass for accuracy
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                let row = (oy + dy) * w + ox;
                for (dx, gx) in g.iter().enumerate() {
                    let wt = gy * gx;
                    let (a, b) = (x[row + dx] - mx, y[row + dx] - my);
                    vx += wt * a * a;
                    vy += wt * b * b;
                    cxy += wt * a * b;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// `|pred - gt|` scaled so its maximum is 1; all zeros when the images agree.
pub fn error_map(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let diff = pred.zip_map(gt, |p, g| (p - g).abs())?;
    let max = diff.max_abs();
    Ok(if max > 0.0 { diff.map(|v| v / max) } else { diff })
}
