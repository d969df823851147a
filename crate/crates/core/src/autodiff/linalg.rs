use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gemm::{gemm, Layout};

/// Splits a rank-2 or rank-3 shape into `(batch, rows, cols)`.
fn as_batched(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [m, n] => Some((1, m, n)),
        [b, m, n] => Some((b, m, n)),
        _ => None,
    }
}

/// Matrix product of `[m,k]x[k,n]`, or batched `[B,m,k]x[B,k,n]`.
/// `trans_a`/`trans_b` read the operand as its transpose without copying.
pub(crate) fn matmul_ex(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let (ba, ra, ca) = as_batched(a.shape())
        .ok_or_else(|| Error::shape("matmul", format!("lhs must be rank 2 or 3, got {:?}", a.shape())))?;
    let (bb, rb, cb) = as_batched(b.shape())
        .ok_or_else(|| Error::shape("matmul", format!("rhs must be rank 2 or 3, got {:?}", b.shape())))?;
    if a.rank() != b.rank() || ba != bb {
        return Err(Error::shape(
            "matmul",
            format!("batch mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let la = if trans_a { Layout::transposed(ra, ca) } else { Layout::row_major(ra, ca) };
    let lb = if trans_b { Layout::transposed(rb, cb) } else { Layout::row_major(rb, cb) };
    let mut out = vec![0.0; ba * m * n];
    for bi in 0..ba {
        gemm(
            &a.data()[bi * ra * ca..(bi + 1) * ra * ca],
            la,
            &b.data()[bi * rb * cb..(bi + 1) * rb * cb],
            lb,
            &mut out[bi * m * n..(bi + 1) * m * n],
            false,
        );
    }
    let shape = if a.rank() == 2 { vec![m, n] } else { vec![ba, m, n] };
    Tensor::new(shape, out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_ex(a, false, b, false)
}

/// Softmax over the last axis with max subtraction.
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let n = *a
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax_rows", "rank-0 input"))?;
    let mut out = a.data().to_vec();
    if n == 0 {
        return Tensor::new(a.shape().to_vec(), out);
    }
    for row in out.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Backward of softmax given its output `y`: `y * (g - <g, y>)` per row.
pub(crate) fn softmax_rows_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = *y.shape().last().expect("rank >= 1");
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("softmax grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_left_multiplication() {
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let a = Tensor::from_fn(&[3, 5], |i| (i as f64).sqrt() - 1.5);
        assert_eq!(matmul(&eye, &a).unwrap().data(), a.data());
    }

    #[test]
    fn inner_mismatch_is_error() {
        assert!(matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).is_err());
        assert!(matmul(&Tensor::zeros(&[2, 2, 3]), &Tensor::zeros(&[3, 3, 2])).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let a = Tensor::new(vec![2, 2], vec![0.0, 3f64.ln(), 5.0, 5.0]).unwrap();
        let s = softmax_rows(&a).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert_eq!(&s.data()[2..], &[0.5, 0.5]);
    }
}
