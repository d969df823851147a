//! Pure data-movement kernels: pixel shuffle, axis permutation, concatenation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[B, C*r*r, H, W] -> [B, C, H*r, W*r]`; output `(c, h*r+i, w*r+j)` reads
/// input channel `c*r*r + i*r + j` at `(h, w)`.
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let &[b, cr2, h, w] = input.shape() else {
        return Err(Error::shape("pixel_shuffle", format!("expected rank 4, got {:?}", input.shape())));
    };
    if r == 0 || cr2 % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cr2} channels not divisible by r^2 = {}", r * r),
        ));
    }
    let c = cr2 / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = &src[((bi * cr2) + ci * r * r + i * r + j) * h * w..][..h * w];
                    for y in 0..h {
                        let dst_row = ((bi * c + ci) * oh + y * r + i) * ow;
                        for x in 0..w {
                            out[dst_row + x * r + j] = plane[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`]: `[B, C, H*r, W*r] -> [B, C*r*r, H, W]`.
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let &[b, c, oh, ow] = input.shape() else {
        return Err(Error::shape("pixel_unshuffle", format!("expected rank 4, got {:?}", input.shape())));
    };
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial size {oh}x{ow} not divisible by {r}"),
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let cr2 = c * r * r;
    let src = input.data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = &mut out[((bi * cr2) + ci * r * r + i * r + j) * h * w..][..h * w];
                    for y in 0..h {
                        let src_row = ((bi * c + ci) * oh + y * r + i) * ow;
                        for x in 0..w {
                            plane[y * w + x] = src[src_row + x * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, cr2, h, w], out)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

pub fn check_permutation(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::shape("transpose", format!("permutation {perm:?} for rank {rank}")));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::shape("transpose", format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Output axis `k` is input axis `perm[k]`.
pub fn transpose(input: &Tensor, perm: &[usize]) -> Result<Tensor> {
    check_permutation(perm, input.rank())?;
    let in_shape = input.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let gathered: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = input.data();
    let mut out = Vec::with_capacity(src.len());
    let rank = out_shape.len();
    if rank == 0 || src.is_empty() {
        return Tensor::new(out_shape, src.to_vec());
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let last = rank - 1;
    loop {
        // innermost axis as a strided run
        let step = gathered[last];
        for t in 0..out_shape[last] {
            out.push(src[offset + t * step]);
        }
        let mut k = last;
        loop {
            if k == 0 {
                return Tensor::new(out_shape, out);
            }
            k -= 1;
            idx[k] += 1;
            offset += gathered[k];
            if idx[k] < out_shape[k] {
                break;
            }
            offset -= gathered[k] * idx[k];
            idx[k] = 0;
        }
    }
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no tensors given"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    let mut total = 0;
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(k, (a, b))| k == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} incompatible with {:?} along axis {axis}", p.shape(), first.shape()),
            ));
        }
        total += p.shape()[axis];
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

/// Splits `input` along `axis` into pieces of the given sizes.
pub fn split(input: &Tensor, axis: usize, sizes: &[usize]) -> Vec<Tensor> {
    let shape = input.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis] * inner;
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let mut data = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                data.extend_from_slice(&input.data()[o * full + start * inner..][..n * inner]);
            }
            start += n;
            let mut s = shape.to_vec();
            s[axis] = n;
            Tensor::new(s, data).expect("split shape")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_shape_law() {
        let x = Tensor::from_fn(&[1, 4, 2, 2], |i| i as f64);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // row 0 interleaves channels 0 and 1
        assert_eq!(&y.data()[..4], &[0.0, 4.0, 1.0, 5.0]);
        assert_eq!(&y.data()[4..8], &[8.0, 12.0, 9.0, 13.0]);
    }

    #[test]
    fn shuffle_r1_identity_and_bad_channels() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.5);
        assert!(pixel_shuffle(&x, 1).unwrap().bit_eq(&x));
        assert!(pixel_shuffle(&x, 2).is_err());
    }

    #[test]
    fn transpose_matches_index_formula() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let y = transpose(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(y.data()[(a * 2 + b) * 3 + c], x.data()[(b * 3 + c) * 4 + a]);
                }
            }
        }
        let back = transpose(&y, &inverse_permutation(&[2, 0, 1])).unwrap();
        assert!(back.bit_eq(&x));
        assert!(transpose(&x, &[0, 0, 1]).is_err());
        assert!(transpose(&x, &[0, 1]).is_err());
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64);
        let b = Tensor::from_fn(&[1, 2, 4, 4], |i| -(i as f64));
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 4, 4, 4]);
        let parts = split(&c, 1, &[2, 2]);
        assert!(parts[0].bit_eq(&a) && parts[1].bit_eq(&b));
        assert!(concat(&[&a], 1).unwrap().bit_eq(&a));
        assert!(concat(&[&a, &Tensor::zeros(&[1, 2, 3, 4])], 1).is_err());
    }
}
