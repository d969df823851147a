//! Direct stride-1 "same" convolution kernels for x86-64 (AVX-512 or
//! AVX2+FMA, picked at runtime). With 16-channel feature maps the im2col
//! GEMM is too thin for a general GEMM to run near peak, so these kernels
//! read shifted rows of a zero-padded copy of the input instead.
//!
//! Every entry point returns `false` when no supported instruction set is
//! present and the caller must fall back to the im2col path.

const PLANE_SKEW: usize = 8;

/// Geometry of one image of a same-padded, stride-1, square-kernel convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SameConv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl SameConv {
    fn pad(&self) -> usize {
        self.k / 2
    }

    fn hp(&self) -> usize {
        self.h + 2 * self.pad()
    }

    fn wp(&self) -> usize {
        self.w + 2 * self.pad()
    }

    /// Channel-plane stride of the padded input. The extra cache line keeps
    /// power-of-two plane sizes from mapping every channel to the same L1 set.
    fn plane(&self) -> usize {
        self.hp() * self.wp() + PLANE_SKEW
    }

    /// Plane stride of the skewed copy of an output gradient.
    fn grad_plane(&self) -> usize {
        self.h * self.w + PLANE_SKEW
    }

    fn taps(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// Offset of tap `t = (c, dy, dx)` in the padded input, relative to the output pixel.
    fn tap_offset(&self, t: usize) -> usize {
        let kk = self.k * self.k;
        let (c, r) = (t / kk, t % kk);
        c * self.plane() + (r / self.k) * self.wp() + r % self.k
    }

    /// Zero-padded copy of one `[in_ch, h, w]` image.
    fn padded(&self, x: &[f64]) -> Vec<f64> {
        let (p, wp, plane) = (self.pad(), self.wp(), self.plane());
        let mut out = vec![0.0; self.in_ch * plane];
        for c in 0..self.in_ch {
            for y in 0..self.h {
                let src = &x[(c * self.h + y) * self.w..][..self.w];
                out[c * plane + (y + p) * wp + p..][..self.w].copy_from_slice(src);
            }
        }
        out
    }

    /// Copy of a `[out_ch, h, w]` gradient with planes `grad_plane()` apart.
    fn skewed_grad(&self, grad: &[f64]) -> Vec<f64> {
        let (n, plane) = (self.h * self.w, self.grad_plane());
        let mut out = vec![0.0; self.out_ch * plane];
        for o in 0..self.out_ch {
            out[o * plane..][..n].copy_from_slice(&grad[o * n..][..n]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Isa {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    #[cfg(target_arch = "x86_64")]
    Avx2,
}

fn detect() -> Option<Isa> {
    static ISA: std::sync::OnceLock<Option<Isa>> = std::sync::OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::env::var_os("MINET_NO_SIMD").is_some() {
                return None;
            }
            if is_x86_feature_detected!("avx512f") {
                return Some(Isa::Avx512);
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return Some(Isa::Avx2);
            }
        }
        None
    })
}

#[cfg(test)]
pub(crate) fn available() -> bool {
    detect().is_some()
}

/// `out[o, y, x] = bias[o] + sum_t weight[o, t] * xpad[t-shift of (y, x)]` for one image.
pub(crate) fn conv_forward(g: &SameConv, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) -> bool {
    let Some(isa) = detect() else { return false };
    assert_eq!(x.len(), g.in_ch * g.h * g.w);
    assert_eq!(weight.len(), g.out_ch * g.taps());
    assert_eq!(bias.len(), g.out_ch);
    assert_eq!(out.len(), g.out_ch * g.h * g.w);
    let xp = g.padded(x);
    // SAFETY: the matching CPU features were detected at runtime, and the
    // kernels only index within the buffers whose lengths are asserted above.
    unsafe {
        match isa {
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => avx512::forward(g, &xp, weight, bias, out),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => avx2::forward(g, &xp, weight, bias, out),
        }
    }
    true
}

/// `dw[o, t] += sum_{y,x} grad[o, y, x] * xpad[t-shift of (y, x)]` for one image.
pub(crate) fn conv_weight_grad(g: &SameConv, x: &[f64], grad: &[f64], dw: &mut [f64]) -> bool {
    let Some(isa) = detect() else { return false };
    assert_eq!(x.len(), g.in_ch * g.h * g.w);
    assert_eq!(grad.len(), g.out_ch * g.h * g.w);
    assert_eq!(dw.len(), g.out_ch * g.taps());
    let xp = g.padded(x);
    let gs = g.skewed_grad(grad);
    // SAFETY: as in `conv_forward`.
    unsafe {
        match isa {
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => avx512::weight_grad(g, &xp, &gs, dw),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => avx2::weight_grad(g, &xp, &gs, dw),
        }
    }
    true
}

/// Weights repacked per block of `mr` output rows as `[taps][mr]`.
fn pack_rows(weight: &[f64], taps: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
    let mr = rows.len();
    let mut out = vec![0.0; taps * mr];
    for (r, o) in rows.enumerate() {
        for t in 0..taps {
            out[t * mr + r] = weight[o * taps + t];
        }
    }
    out
}

fn forward_tail(g: &SameConv, xp: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64], y: usize, xs: std::ops::Range<usize>) {
    let taps = g.taps();
    let offsets: Vec<usize> = (0..taps).map(|t| g.tap_offset(t)).collect();
    for o in 0..g.out_ch {
        let wrow = &weight[o * taps..][..taps];
        for x in xs.clone() {
            let base = y * g.wp() + x;
            let mut acc = bias[o];
            for (wv, off) in wrow.iter().zip(&offsets) {
                acc += wv * xp[base + off];
            }
            out[(o * g.h + y) * g.w + x] = acc;
        }
    }
}

/// Scalar weight gradient over the columns `xs`; `grad` is the skewed copy.
fn weight_grad_scalar(g: &SameConv, xp: &[f64], grad: &[f64], dw: &mut [f64], rows: std::ops::Range<usize>, taps: std::ops::Range<usize>, xs: std::ops::Range<usize>) {
    let ntaps = g.taps();
    for o in rows {
        for t in taps.clone() {
            let off = g.tap_offset(t);
            let mut acc = 0.0;
            for y in 0..g.h {
                let grow = &grad[o * g.grad_plane() + y * g.w..][..g.w];
                let xrow = &xp[off + y * g.wp()..];
                for x in xs.clone() {
                    acc += grow[x] * xrow[x];
                }
            }
            dw[o * ntaps + t] += acc;
        }
    }
}

macro_rules! isa_kernels {
    ($name:ident, $feat:literal, $vec:ty, $lanes:expr, $nv:expr, $mr:expr, $cob:expr,
     $zero:ident, $set1:ident, $load:ident, $store:ident, $fmadd:ident) => {
        #[cfg(target_arch = "x86_64")]
        mod $name {
            use super::*;
            use std::arch::x86_64::*;

            const LANES: usize = $lanes;
            const NR: usize = LANES * $nv;

            #[target_feature(enable = $feat)]
            #[allow(clippy::too_many_arguments)]
            unsafe fn forward_block<const MR: usize>(
                g: &SameConv,
                xp: &[f64],
                wpack: &[f64],
                bias: &[f64],
                out: &mut [f64],
                y: usize,
                x0: usize,
                o0: usize,
                offsets: &[usize],
            ) {
                let mut acc = [[$zero(); $nv]; MR];
                for r in 0..MR {
                    for v in 0..$nv {
                        acc[r][v] = $set1(bias[o0 + r]);
                    }
                }
                let base = xp.as_ptr().add(y * g.wp() + x0);
                let wp = wpack.as_ptr();
                for (t, &off) in offsets.iter().enumerate() {
                    let src = base.add(off);
                    let mut b = [$zero(); $nv];
                    for v in 0..$nv {
                        b[v] = $load(src.add(v * LANES));
                    }
                    for r in 0..MR {
                        let a = $set1(*wp.add(t * MR + r));
                        for v in 0..$nv {
                            acc[r][v] = $fmadd(a, b[v], acc[r][v]);
                        }
                    }
                }
                for r in 0..MR {
                    let dst = out.as_mut_ptr().add(((o0 + r) * g.h + y) * g.w + x0);
                    for v in 0..$nv {
                        $store(dst.add(v * LANES), acc[r][v]);
                    }
                }
            }

            #[target_feature(enable = $feat)]
            pub(super) unsafe fn forward(g: &SameConv, xp: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
                let taps = g.taps();
                let offsets: Vec<usize> = (0..taps).map(|t| g.tap_offset(t)).collect();
                // row blocks of $mr, then 4, then single rows
                let mut blocks = Vec::new();
                let mut o = 0;
                while o < g.out_ch {
                    let mr = if g.out_ch - o >= $mr { $mr } else if g.out_ch - o >= 4 { 4 } else { 1 };
                    blocks.push((o, mr, pack_rows(weight, taps, o..o + mr)));
                    o += mr;
                }
                let full = g.w / NR * NR;
                for y in 0..g.h {
                    for x0 in (0..full).step_by(NR) {
                        for (o0, mr, pack) in &blocks {
                            if *mr == $mr {
                                forward_block::<$mr>(g, xp, pack, bias, out, y, x0, *o0, &offsets);
                            } else if *mr == 4 {
                                forward_block::<4>(g, xp, pack, bias, out, y, x0, *o0, &offsets);
                            } else {
                                forward_block::<1>(g, xp, pack, bias, out, y, x0, *o0, &offsets);
                            }
                        }
                    }
                    if full < g.w {
                        forward_tail(g, xp, weight, bias, out, y, full..g.w);
                    }
                }
            }

            #[target_feature(enable = $feat)]
            unsafe fn grad_block<const CO: usize, const TB: usize>(
                g: &SameConv,
                xp: &[f64],
                grad: &[f64],
                dw: &mut [f64],
                o0: usize,
                t0: usize,
                chunks: usize,
            ) {
                let mut acc = [[$zero(); TB]; CO];
                let mut offs = [0usize; TB];
                for j in 0..TB {
                    offs[j] = g.tap_offset(t0 + j);
                }
                let gp = grad.as_ptr();
                let gplane = g.grad_plane();
                let xpp = xp.as_ptr();
                for y in 0..g.h {
                    let xrow = y * g.wp();
                    for c in 0..chunks {
                        let x = c * LANES;
                        let mut gv = [$zero(); CO];
                        for r in 0..CO {
                            gv[r] = $load(gp.add((o0 + r) * gplane + y * g.w + x));
                        }
                        for j in 0..TB {
                            let xv = $load(xpp.add(xrow + offs[j] + x));
                            for r in 0..CO {
                                acc[r][j] = $fmadd(gv[r], xv, acc[r][j]);
                            }
                        }
                    }
                }
                let ntaps = g.taps();
                let mut lanes = [0.0f64; LANES];
                for r in 0..CO {
                    for j in 0..TB {
                        $store(lanes.as_mut_ptr(), acc[r][j]);
                        dw[(o0 + r) * ntaps + t0 + j] += lanes.iter().sum::<f64>();
                    }
                }
            }

            #[target_feature(enable = $feat)]
            pub(super) unsafe fn weight_grad(g: &SameConv, xp: &[f64], grad: &[f64], dw: &mut [f64]) {
                const TB: usize = 4;
                let ntaps = g.taps();
                let chunks = g.w / LANES;
                let full_t = ntaps / TB * TB;
                let mut o = 0;
                while o < g.out_ch {
                    let co = if g.out_ch - o >= $cob { $cob } else { 1 };
                    for t0 in (0..full_t).step_by(TB) {
                        if co == $cob {
                            grad_block::<$cob, TB>(g, xp, grad, dw, o, t0, chunks);
                        } else {
                            grad_block::<1, TB>(g, xp, grad, dw, o, t0, chunks);
                        }
                    }
                    for t in full_t..ntaps {
                        grad_block::<1, 1>(g, xp, grad, dw, o, t, chunks);
                        for r in 1..co {
                            grad_block::<1, 1>(g, xp, grad, dw, o + r, t, chunks);
                        }
                    }
                    o += co;
                }
                if chunks * LANES < g.w {
                    weight_grad_scalar(g, xp, grad, dw, 0..g.out_ch, 0..ntaps, chunks * LANES..g.w);
                }
            }
        }
    };
}

isa_kernels!(avx512, "avx512f", __m512d, 8, 2, 8, 4,
    _mm512_setzero_pd, _mm512_set1_pd, _mm512_loadu_pd, _mm512_storeu_pd, _mm512_fmadd_pd);
isa_kernels!(avx2, "avx2,fma", __m256d, 4, 2, 4, 2,
    _mm256_setzero_pd, _mm256_set1_pd, _mm256_loadu_pd, _mm256_storeu_pd, _mm256_fmadd_pd);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(g: &SameConv, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let p = g.pad() as isize;
        let mut out = vec![0.0; g.out_ch * g.h * g.w];
        for o in 0..g.out_ch {
            for y in 0..g.h {
                for xx in 0..g.w {
                    let mut acc = b[o];
                    for c in 0..g.in_ch {
                        for i in 0..g.k {
                            for j in 0..g.k {
                                let iy = y as isize + i as isize - p;
                                let ix = xx as isize + j as isize - p;
                                if iy >= 0 && iy < g.h as isize && ix >= 0 && ix < g.w as isize {
                                    acc += w[((o * g.in_ch + c) * g.k + i) * g.k + j]
                                        * x[(c * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * g.h + y) * g.w + xx] = acc;
                }
            }
        }
        out
    }

    fn naive_weight_grad(g: &SameConv, x: &[f64], gr: &[f64]) -> Vec<f64> {
        let p = g.pad() as isize;
        let mut dw = vec![0.0; g.out_ch * g.taps()];
        for o in 0..g.out_ch {
            for c in 0..g.in_ch {
                for i in 0..g.k {
                    for j in 0..g.k {
                        let mut acc = 0.0;
                        for y in 0..g.h {
                            for xx in 0..g.w {
                                let iy = y as isize + i as isize - p;
                                let ix = xx as isize + j as isize - p;
                                if iy >= 0 && iy < g.h as isize && ix >= 0 && ix < g.w as isize {
                                    acc += gr[(o * g.h + y) * g.w + xx] * x[(c * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        dw[((o * g.in_ch + c) * g.k + i) * g.k + j] = acc;
                    }
                }
            }
        }
        dw
    }

    fn pseudo(n: usize, salt: usize) -> Vec<f64> {
        (0..n).map(|i| (((i * 7919 + salt * 104729) % 1009) as f64) / 504.5 - 1.0).collect()
    }

    #[test]
    fn kernels_match_nested_loops() {
        if !available() {
            return;
        }
        let shapes = [(3, 16, 8, 32, 3), (16, 16, 5, 19, 3), (2, 5, 4, 4, 1), (1, 1, 3, 17, 3), (9, 13, 6, 21, 5)];
        for &(in_ch, out_ch, h, w, k) in &shapes {
            let g = SameConv { in_ch, out_ch, h, w, k };
            let x = pseudo(in_ch * h * w, 1);
            let wt = pseudo(out_ch * g.taps(), 2);
            let b = pseudo(out_ch, 3);
            let mut out = vec![0.0; out_ch * h * w];
            assert!(conv_forward(&g, &x, &wt, &b, &mut out));
            for (a, e) in out.iter().zip(naive_forward(&g, &x, &wt, &b)) {
                assert!((a - e).abs() < 1e-12, "{g:?}");
            }
            let gr = pseudo(out_ch * h * w, 4);
            let mut dw = vec![0.0; out_ch * g.taps()];
            assert!(conv_weight_grad(&g, &x, &gr, &mut dw));
            for (a, e) in dw.iter().zip(naive_weight_grad(&g, &x, &gr)) {
                assert!((a - e).abs() < 1e-10, "{g:?}");
            }
        }
    }
}
