//! Cubic convolution interpolation (Keys kernel, `a = -0.5`).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBIC_A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse resampling matrix: for each output index, `(input index, weight)` taps.
pub(crate) type Taps = Vec<Vec<(usize, f64)>>;

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Upsampling taps with half-pixel centres and edge clamping.
pub(crate) fn upsample_taps(n_in: usize, r: usize) -> Taps {
    (0..n_in * r)
        .map(|i| {
            let src = (i as f64 + 0.5) / r as f64 - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            (-1..=2)
                .map(|k| (clamp_index(base + k, n_in), cubic_kernel(t - k as f64)))
                .collect()
        })
        .collect()
}

/// Applies separable taps to a `[h, w]` image: `rows` along y, `cols` along x.
pub(crate) fn resample(img: &Tensor, rows: &Taps, cols: &Taps) -> Result<Tensor> {
    let &[h, w] = img.shape() else {
        return Err(Error::shape("resample", format!("expected a 2-D image, got {:?}", img.shape())));
    };
    let (oh, ow) = (rows.len(), cols.len());
    let src = img.data();
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, taps) in cols.iter().enumerate() {
            tmp[y * ow + x] = taps.iter().map(|&(i, wt)| wt * row[i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, taps) in rows.iter().enumerate() {
        for &(i, wt) in taps {
            let src_row = &tmp[i * ow..(i + 1) * ow];
            for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += wt * s;
            }
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Bicubic upsampling of a `[N, N]` image to `[rN, rN]`; the evaluation baseline.
pub fn bicubic_upsample(lr: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::Input("upsampling factor must be positive".into()));
    }
    let &[h, w] = lr.shape() else {
        return Err(Error::shape("bicubic_upsample", format!("expected a 2-D image, got {:?}", lr.shape())));
    };
    resample(lr, &upsample_taps(h, r), &upsample_taps(w, r))
}
