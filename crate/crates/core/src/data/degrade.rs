//! Simulated low-resolution acquisition.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::interp::{cubic_kernel, resample, Taps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegradeMethod {
    /// Keep the central `N x N` block of the 2-D spectrum, then take the magnitude.
    #[default]
    KspaceTruncation,
    /// Antialiasing bicubic filter followed by `r`-strided sampling.
    BicubicDecimation,
}

impl DegradeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DegradeMethod::KspaceTruncation => "kspace_truncation",
            DegradeMethod::BicubicDecimation => "bicubic_decimation",
        }
    }
}

impl fmt::Display for DegradeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kspace_truncation" => Ok(Self::KspaceTruncation),
            "bicubic_decimation" => Ok(Self::BicubicDecimation),
            _ => Err(Error::Config(format!("unknown degradation method {s:?}"))),
        }
    }
}

pub fn degrade(hr: &Tensor, r: usize, method: DegradeMethod) -> Result<Tensor> {
    match method {
        DegradeMethod::KspaceTruncation => kspace_truncation(hr, r),
        DegradeMethod::BicubicDecimation => bicubic_decimation(hr, r),
    }
}

fn check_divisible(hr: &Tensor, r: usize) -> Result<(usize, usize)> {
    let &[h, w] = hr.shape() else {
        return Err(Error::shape("degrade", format!("expected a 2-D image, got {:?}", hr.shape())));
    };
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Input(format!("image {h}x{w} is not divisible by factor {r}")));
    }
    Ok((h, w))
}

/// In-place 2-D DFT over a row-major `h x w` buffer.
fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Signed frequency of DFT bin `k` out of `n`, in `[-n/2, n/2)`.
fn signed_freq(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) { k as isize } else { k as isize - n as isize }
}

/// Low-pass by truncating the centred spectrum to `(h/r) x (w/r)`, then
/// magnitude. Scaled by `1/r^2` so a constant image keeps its value; values
/// are clamped to `[0, 1]`.
pub fn kspace_truncation(hr: &Tensor, r: usize) -> Result<Tensor> {
    let (h, w) = check_divisible(hr, r)?;
    let (lh, lw) = (h / r, w / r);
    let mut spec: Vec<Complex64> = hr.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spec, h, w, false);
    let mut low = vec![Complex64::default(); lh * lw];
    for ly in 0..lh {
        let fy = signed_freq(ly, lh);
        let hy = fy.rem_euclid(h as isize) as usize;
        for lx in 0..lw {
            let fx = signed_freq(lx, lw);
            let hx = fx.rem_euclid(w as isize) as usize;
            low[ly * lw + lx] = spec[hy * w + hx];
        }
    }
    fft2(&mut low, lh, lw, true);
    // forward is unnormalised and the inverse carries 1/(lh*lw); the extra
    // 1/(r*r) makes the overall map preserve the DC value
    let scale = 1.0 / ((lh * lw) as f64 * (r * r) as f64);
    let data = low.iter().map(|z| (z.norm() * scale).clamp(0.0, 1.0)).collect();
    Tensor::new(vec![lh, lw], data)
}

fn decimation_taps(n_in: usize, r: usize) -> Taps {
    let support = 2.0 * r as f64;
    (0..n_in / r)
        .map(|i| {
            let center = (i as f64 + 0.5) * r as f64 - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| {
                    let idx = j.clamp(0, n_in as isize - 1) as usize;
                    (idx, cubic_kernel((j as f64 - center) / r as f64))
                })
                .filter(|&(_, wt)| wt != 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Antialiased bicubic downsampling by `r`, clamped to `[0, 1]`.
pub fn bicubic_decimation(hr: &Tensor, r: usize) -> Result<Tensor> {
    let (h, w) = check_divisible(hr, r)?;
    let out = resample(hr, &decimation_taps(h, r), &decimation_taps(w, r))?;
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}
