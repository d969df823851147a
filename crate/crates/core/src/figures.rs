//! Raster figures for PGM export: line plots and side-by-side panels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exponential moving average with weight `alpha` on the newest value.
pub fn smooth(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

/// Draws `values` as a dark polyline on a white `[height, width]` canvas.
/// With `log_y` the vertical axis is logarithmic; non-positive values are
/// then clamped to the smallest positive one.
pub fn plot_curve(values: &[f64], width: usize, height: usize, log_y: bool) -> Result<Tensor> {
    if width < 2 || height < 2 {
        return Err(Error::Input(format!("plot canvas {width}x{height} is too small")));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("plot needs a non-empty series of finite values".into()));
    }
    let floor = values.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let map_y = |v: f64| if log_y { v.max(floor).ln() } else { v };
    if log_y && !floor.is_finite() {
        return Err(Error::Input("log-scale plot needs a positive value".into()));
    }
    let ys: Vec<f64> = values.iter().map(|&v| map_y(v)).collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let row_of = |y: f64| -> usize { ((hi - y) / span * (height - 1) as f64).round() as usize };

    let mut canvas = Tensor::full(&[height, width], 1.0);
    let data = canvas.data_mut();
    let n = ys.len();
    let mut prev: Option<usize> = None;
    for col in 0..width {
        // sample the series at this column, linearly between neighbours
        let pos = if n == 1 { 0.0 } else { col as f64 * (n - 1) as f64 / (width - 1) as f64 };
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        let y = if i + 1 < n { ys[i] * (1.0 - frac) + ys[i + 1] * frac } else { ys[i] };
        let row = row_of(y);
        let (a, b) = match prev {
            Some(p) => (p.min(row), p.max(row)),
            None => (row, row),
        };
        for r in a..=b {
            data[r * width + col] = 0.0;
        }
        prev = Some(row);
    }
    Ok(canvas)
}

/// Nearest-neighbour enlargement of a `[h, w]` image by an integer factor.
pub fn upscale_nearest(img: &Tensor, factor: usize) -> Result<Tensor> {
    let &[h, w] = img.shape() else {
        return Err(Error::shape("upscale_nearest", format!("expected [h, w], got {:?}", img.shape())));
    };
    if factor == 0 {
        return Err(Error::Input("upscale factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let src = img.data();
    Ok(Tensor::from_fn(&[oh, ow], |i| src[(i / ow / factor) * w + (i % ow) / factor]))
}

/// Places equally tall `[h, w_i]` images left to right, separated by white
/// columns `gap` pixels wide.
pub fn hstack(images: &[Tensor], gap: usize) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Input("panel needs at least one image".into()));
    };
    let h = first.shape().first().copied().unwrap_or(0);
    let mut width = 0;
    for img in images {
        match img.shape() {
            &[ih, iw] if ih == h => width += iw,
            s => return Err(Error::shape("hstack", format!("expected [{h}, w] images, got {s:?}"))),
        }
    }
    width += gap * (images.len() - 1);
    let mut out = Tensor::full(&[h, width], 1.0);
    let dst = out.data_mut();
    let mut x0 = 0;
    for img in images {
        let iw = img.shape()[1];
        for (y, row) in img.data().chunks(iw).enumerate() {
            dst[y * width + x0..y * width + x0 + iw].copy_from_slice(row);
        }
        x0 += iw + gap;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_starts_at_first_value_and_damps_steps() {
        let s = smooth(&[1.0, 0.0, 0.0], 0.5);
        assert_eq!(s, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn curve_touches_top_and_bottom_rows() {
        let img = plot_curve(&[4.0, 3.0, 2.0, 1.0], 16, 8, false).unwrap();
        let d = img.data();
        assert_eq!(d[0], 0.0, "first value sits on the top row at column 0");
        assert_eq!(d[7 * 16 + 15], 0.0, "last value sits on the bottom row at the last column");
        assert!(d.iter().all(|&v| v == 0.0 || v == 1.0));
        // every column has ink
        assert!((0..16).all(|c| (0..8).any(|r| d[r * 16 + c] == 0.0)));
    }

    #[test]
    fn log_curve_rejects_all_non_positive() {
        assert!(plot_curve(&[0.0, -1.0], 8, 8, true).is_err());
        assert!(plot_curve(&[f64::NAN], 8, 8, false).is_err());
    }

    #[test]
    fn nearest_upscale_replicates_blocks() {
        let img = Tensor::new(vec![1, 2], vec![0.25, 0.75]).unwrap();
        let up = upscale_nearest(&img, 2).unwrap();
        assert_eq!(up.shape(), &[2, 4]);
        assert_eq!(up.data(), &[0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn hstack_inserts_white_gaps() {
        let a = Tensor::zeros(&[2, 1]);
        let b = Tensor::full(&[2, 2], 0.5);
        let p = hstack(&[a, b], 1).unwrap();
        assert_eq!(p.shape(), &[2, 4]);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 0.5, 0.5]);
        assert!(hstack(&[Tensor::zeros(&[2, 2]), Tensor::zeros(&[3, 2])], 0).is_err());
    }
}
