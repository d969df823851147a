//! Convolution kernels. Stride-1 same-padded 2-D convolutions use the direct
//! SIMD kernels when the CPU supports them; everything else lowers each image
//! to a column matrix and runs one GEMM per image. 3-D convolution (single
//! in/out channel, used for the attention map) is a direct correlation loop.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

use super::gemm::{gemm, Layout};
use super::simd::{self, SameConv};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, pad: usize) -> Result<Self> {
        Self::with_pads(input, weight, bias, stride, pad, pad)
    }

    fn with_pads(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Self> {
        let op = "conv2d";
        let &[batch, in_ch, h, w] = input else {
            return Err(Error::shape(op, format!("input must be [B,C,H,W], got {input:?}")));
        };
        let &[out_ch, wc, kh, kw] = weight else {
            return Err(Error::shape(op, format!("weight must be [O,C,kh,kw], got {weight:?}")));
        };
        if wc != in_ch {
            return Err(Error::shape(
                op,
                format!("input has {in_ch} channels but weight expects {wc}"),
            ));
        }
        if bias != [out_ch] {
            return Err(Error::shape(
                op,
                format!("bias must be [{out_ch}], got {bias:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(op, "stride must be at least 1"));
        }
        if kh == 0 || kw == 0 || h + 2 * pad_h < kh || w + 2 * pad_w < kw {
            return Err(Error::shape(
                op,
                format!("kernel {kh}x{kw} does not fit {h}x{w} input with padding ({pad_h},{pad_w})"),
            ));
        }
        Ok(Self {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            oh: (h + 2 * pad_h - kh) / stride + 1,
            ow: (w + 2 * pad_w - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn in_image(&self) -> usize {
        self.in_ch * self.h * self.w
    }

    fn out_image(&self) -> usize {
        self.out_ch * self.oh * self.ow
    }

    /// Stride-1, square odd kernel with `pad = k / 2`: output size equals input size.
    fn as_same(&self) -> Option<SameConv> {
        let same = self.stride == 1
            && self.kh == self.kw
            && self.kh % 2 == 1
            && self.pad_h == self.kh / 2
            && self.pad_w == self.kw / 2;
        same.then_some(SameConv { in_ch: self.in_ch, out_ch: self.out_ch, h: self.h, w: self.w, k: self.kh })
    }
}

fn im2col(x: &[f64], g: &Conv2dGeom, cols: &mut [f64]) {
    let npix = g.out_pixels();
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * npix..][..npix];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid ox satisfy 0 <= ox + j - pad < w
                        let lo = g.pad_w.saturating_sub(j).min(g.ow);
                        let hi = (g.w + g.pad_w).saturating_sub(j).min(g.ow).max(lo);
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        let start = lo + j - g.pad_w;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + j) as isize - g.pad_w as isize;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Conv2dGeom, dx: &mut [f64]) {
    let npix = g.out_pixels();
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * npix..][..npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_image(x: &[f64], weight: &[f64], bias: &[f64], g: &Conv2dGeom, out: &mut [f64]) {
    if let Some(sc) = g.as_same() {
        if simd::conv_forward(&sc, x, weight, bias, out) {
            return;
        }
    }
    forward_image_gemm(x, weight, bias, g, out);
}

fn forward_image_gemm(x: &[f64], weight: &[f64], bias: &[f64], g: &Conv2dGeom, out: &mut [f64]) {
    let npix = g.out_pixels();
    let k = g.patch_len();
    if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0 {
        // 1x1 convolution: the image itself is the column matrix
        gemm(weight, Layout::row_major(g.out_ch, k), x, Layout::row_major(k, npix), out, false);
    } else {
        let mut cols = vec![0.0; k * npix];
        im2col(x, g, &mut cols);
        gemm(weight, Layout::row_major(g.out_ch, k), &cols, Layout::row_major(k, npix), out, false);
    }
    for (o, &b) in bias.iter().enumerate() {
        for v in &mut out[o * npix..(o + 1) * npix] {
            *v += b;
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = Conv2dGeom::new(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
    Ok(forward_with(input.data(), weight.data(), bias.data(), &g))
}

fn forward_with(x: &[f64], weight: &[f64], bias: &[f64], g: &Conv2dGeom) -> Tensor {
    let mut out = vec![0.0; g.batch * g.out_image()];
    parallel::for_each_chunk_mut(&mut out, g.out_image(), |b, dst| {
        forward_image(&x[b * g.in_image()..(b + 1) * g.in_image()], weight, bias, g, dst);
    });
    Tensor::new(vec![g.batch, g.out_ch, g.oh, g.ow], out).expect("conv output shape")
}

/// Weights permuted `[O,C,kh,kw] -> [C,O,kh,kw]` and spatially flipped.
fn flipped_transpose(weight: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let mut out = vec![0.0; weight.len()];
    let kk = g.kh * g.kw;
    for o in 0..g.out_ch {
        for c in 0..g.in_ch {
            let src = &weight[(o * g.in_ch + c) * kk..][..kk];
            let dst = &mut out[(c * g.out_ch + o) * kk..][..kk];
            for (t, v) in src.iter().enumerate() {
                dst[kk - 1 - t] = *v;
            }
        }
    }
    out
}

pub(crate) struct Conv2dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<Conv2dGrads> {
    let g = Conv2dGeom::new(
        input.shape(),
        weight.shape(),
        &[weight.shape()[0]],
        stride,
        pad,
    )?;
    let npix = g.out_pixels();
    let k = g.patch_len();
    let x = input.data();
    let gy = grad_out.data();
    let w = weight.data();

    let transposed_geom = if stride == 1 && pad < g.kh && pad < g.kw {
        Some(Conv2dGeom::with_pads(
            &[1, g.out_ch, g.oh, g.ow],
            &[g.in_ch, g.out_ch, g.kh, g.kw],
            &[g.in_ch],
            1,
            g.kh - 1 - pad,
            g.kw - 1 - pad,
        )?)
    } else {
        None
    };
    let w_flip = transposed_geom.map(|_| flipped_transpose(w, &g));
    let zero_bias = vec![0.0; g.in_ch];

    let per_image: Vec<(Vec<f64>, Option<Vec<f64>>)> = parallel::map_indices(g.batch, |b| {
        let xb = &x[b * g.in_image()..(b + 1) * g.in_image()];
        let gb = &gy[b * g.out_image()..(b + 1) * g.out_image()];
        let mut dw = vec![0.0; g.out_ch * k];
        let mut cols = Vec::new();
        let direct = g.as_same().is_some_and(|sc| simd::conv_weight_grad(&sc, xb, gb, &mut dw));
        if !direct {
            cols = vec![0.0; k * npix];
            im2col(xb, &g, &mut cols);
            gemm(
                gb,
                Layout::row_major(g.out_ch, npix),
                &cols,
                Layout::transposed(k, npix),
                &mut dw,
                false,
            );
        }
        let dx = need_input.then(|| {
            let mut dx = vec![0.0; g.in_image()];
            match (&transposed_geom, &w_flip) {
                (Some(tg), Some(wf)) => forward_image(gb, wf, &zero_bias, tg, &mut dx),
                _ => {
                    cols.resize(k * npix, 0.0);
                    gemm(
                        w,
                        Layout::transposed(g.out_ch, k),
                        gb,
                        Layout::row_major(g.out_ch, npix),
                        &mut cols,
                        false,
                    );
                    col2im(&cols, &g, &mut dx);
                }
            }
            dx
        });
        (dw, dx)
    });

    let mut dw = vec![0.0; g.out_ch * k];
    let mut dx = need_input.then(|| Vec::with_capacity(g.batch * g.in_image()));
    for (pw, px) in per_image {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a += b;
        }
        if let (Some(acc), Some(px)) = (dx.as_mut(), px) {
            acc.extend_from_slice(&px);
        }
    }
    let mut db = vec![0.0; g.out_ch];
    for b in 0..g.batch {
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += gy[b * g.out_image() + o * npix..][..npix].iter().sum::<f64>();
        }
    }
    Ok(Conv2dGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d).expect("dx shape")),
        weight: Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        bias: Tensor::new(vec![g.out_ch], db).expect("db shape"),
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv3dGeom {
    pub batch: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub k: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], pad: [usize; 3]) -> Result<Self> {
        let op = "conv3d";
        let &[batch, 1, d, h, w] = input else {
            return Err(Error::shape(op, format!("input must be [B,1,D,H,W], got {input:?}")));
        };
        let &[1, 1, kd, kh, kw] = weight else {
            return Err(Error::shape(op, format!("weight must be [1,1,kd,kh,kw], got {weight:?}")));
        };
        if bias != [1] {
            return Err(Error::shape(op, format!("bias must be [1], got {bias:?}")));
        }
        let k = [kd, kh, kw];
        for axis in 0..3 {
            if k[axis] % 2 == 0 || k[axis] != 2 * pad[axis] + 1 {
                return Err(Error::Config(format!(
                    "conv3d kernel {k:?} with padding {pad:?} does not preserve the input shape"
                )));
            }
        }
        Ok(Self { batch, d, h, w, k, pad })
    }

    fn volume(&self) -> usize {
        self.d * self.h * self.w
    }
}

/// Same-padded 3-D correlation of one volume; `flip` reverses the kernel.
fn correlate3d(x: &[f64], kernel: &[f64], g: &Conv3dGeom, flip: bool, out: &mut [f64]) {
    let [kd, kh, kw] = g.k;
    let [pd, ph, pw] = g.pad;
    for a in 0..kd {
        for b in 0..kh {
            for c in 0..kw {
                let t = (a * kh + b) * kw + c;
                let kv = if flip { kernel[kernel.len() - 1 - t] } else { kernel[t] };
                if kv == 0.0 {
                    continue;
                }
                let (oa, ob, oc) = (a, b, c);
                for z in 0..g.d {
                    let iz = (z + oa) as isize - pd as isize;
                    if iz < 0 || iz >= g.d as isize {
                        continue;
                    }
                    for y in 0..g.h {
                        let iy = (y + ob) as isize - ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &x[(iz as usize * g.h + iy as usize) * g.w..][..g.w];
                        let dst = &mut out[(z * g.h + y) * g.w..][..g.w];
                        let lo = pw.saturating_sub(oc).min(g.w);
                        let hi = (g.w + pw).saturating_sub(oc).min(g.w).max(lo);
                        let start = lo + oc - pw;
                        for (dv, sv) in dst[lo..hi].iter_mut().zip(&src[start..start + (hi - lo)]) {
                            *dv += kv * sv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    pad: [usize; 3],
) -> Result<Tensor> {
    let g = Conv3dGeom::new(input.shape(), weight.shape(), bias.shape(), pad)?;
    let b0 = bias.data()[0];
    let mut out = vec![b0; input.len()];
    let x = input.data();
    let kernel = weight.data();
    parallel::for_each_chunk_mut(&mut out, g.volume(), |b, dst| {
        correlate3d(&x[b * g.volume()..(b + 1) * g.volume()], kernel, &g, false, dst);
    });
    Ok(Tensor::new(input.shape().to_vec(), out).expect("conv3d output shape"))
}

pub(crate) struct Conv3dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    pad: [usize; 3],
    need_input: bool,
) -> Result<Conv3dGrads> {
    let g = Conv3dGeom::new(input.shape(), weight.shape(), &[1], pad)?;
    let x = input.data();
    let gy = grad_out.data();
    let [kd, kh, kw] = g.k;
    let [pd, ph, pw] = g.pad;

    let dx = need_input.then(|| {
        let mut dx = vec![0.0; input.len()];
        parallel::for_each_chunk_mut(&mut dx, g.volume(), |b, dst| {
            correlate3d(&gy[b * g.volume()..(b + 1) * g.volume()], weight.data(), &g, true, dst);
        });
        Tensor::new(input.shape().to_vec(), dx).expect("dx shape")
    });

    let partial: Vec<Vec<f64>> = parallel::map_indices(g.batch, |b| {
        let xv = &x[b * g.volume()..(b + 1) * g.volume()];
        let gv = &gy[b * g.volume()..(b + 1) * g.volume()];
        let mut dw = vec![0.0; kd * kh * kw];
        for a in 0..kd {
            for bb in 0..kh {
                for c in 0..kw {
                    let mut acc = 0.0;
                    for z in 0..g.d {
                        let iz = (z + a) as isize - pd as isize;
                        if iz < 0 || iz >= g.d as isize {
                            continue;
                        }
                        for y in 0..g.h {
                            let iy = (y + bb) as isize - ph as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let src = &xv[(iz as usize * g.h + iy as usize) * g.w..][..g.w];
                            let gr = &gv[(z * g.h + y) * g.w..][..g.w];
                            let lo = pw.saturating_sub(c).min(g.w);
                            let hi = (g.w + pw).saturating_sub(c).min(g.w).max(lo);
                            let start = lo + c - pw;
                            acc += gr[lo..hi]
                                .iter()
                                .zip(&src[start..start + (hi - lo)])
                                .map(|(p, q)| p * q)
                                .sum::<f64>();
                        }
                    }
                    dw[(a * kh + bb) * kw + c] = acc;
                }
            }
        }
        dw
    });
    let mut dw = vec![0.0; kd * kh * kw];
    for p in partial {
        for (a, b) in dw.iter_mut().zip(&p) {
            *a += b;
        }
    }
    Ok(Conv3dGrads {
        input: dx,
        weight: Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        bias: Tensor::scalar(gy.iter().sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let g = Conv2dGeom::new(x.shape(), w.shape(), bias.shape(), stride, pad).unwrap();
        let mut out = vec![0.0; g.batch * g.out_image()];
        for b in 0..g.batch {
            for o in 0..g.out_ch {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = bias.data()[o];
                        for c in 0..g.in_ch {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * g.in_ch + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * w.data()[((o * g.in_ch + c) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                        out[((b * g.out_ch + o) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![g.batch, g.out_ch, g.oh, g.ow], out).unwrap()
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn gemm_path_matches_nested_loops() {
        for (stride, pad, k) in [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2), (1, 2, 3)] {
            let x = pseudo(&[2, 3, 7, 6], 0.731);
            let w = pseudo(&[4, 3, k, k], 1.37);
            let b = pseudo(&[4], 2.1);
            let fast = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let slow = naive_conv2d(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn im2col_path_matches_nested_loops() {
        for (stride, pad, k) in [(1, 1, 3), (1, 0, 1), (1, 2, 5), (2, 1, 3)] {
            let x = pseudo(&[1, 3, 7, 9], 0.41);
            let w = pseudo(&[5, 3, k, k], 0.93);
            let b = pseudo(&[5], 1.7);
            let g = Conv2dGeom::new(x.shape(), w.shape(), b.shape(), stride, pad).unwrap();
            let mut out = vec![0.0; g.out_image()];
            forward_image_gemm(x.data(), w.data(), b.data(), &g, &mut out);
            let slow = naive_conv2d(&x, &w, &b, stride, pad);
            for (a, e) in out.iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn box_sum_of_ones() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b, 1, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 3, 3]), &b, 0, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 7, 7]), &b, 1, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2]), 1, 1).is_err());
    }

    #[test]
    fn conv3d_ones_kernel_on_constant() {
        let c = 0.7;
        let x = Tensor::full(&[1, 1, 4, 5, 5], c);
        let w = Tensor::ones(&[1, 1, 3, 3, 3]);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[1]), [1, 1, 1]).unwrap();
        let idx = (5 + 2) * 5 + 2; // depth 1, row 2, col 2: fully interior
        assert!((y.data()[idx] - 27.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv3d_rejects_non_same_padding() {
        let x = Tensor::zeros(&[1, 1, 4, 5, 5]);
        let w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        assert!(matches!(
            conv3d_forward(&x, &w, &Tensor::zeros(&[1]), [0, 1, 1]),
            Err(Error::Config(_))
        ));
    }
}
