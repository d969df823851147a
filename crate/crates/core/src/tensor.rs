//! Dense row-major tensors of `f64` and their binary container format.
//!
//! The on-disk container is little-endian: the magic `MNT1`, a `u32` rank,
//! `rank` `u64` dimensions, then the raw `f64` payload.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MNT1";

/// Upper bound on elements accepted when decoding, guards against corrupt headers.
const MAX_DECODE_ELEMENTS: u64 = 1 << 32;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {:?} holds {} elements but {} were given",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Entries drawn uniformly from `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(low..high))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Slice `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Result<Self> {
        let Some((&lead, rest)) = self.shape.split_first() else {
            return Err(Error::shape("index_axis0", "rank-0 tensor"));
        };
        if index >= lead {
            return Err(Error::shape(
                "index_axis0",
                format!("index {index} out of range for leading dim {lead}"),
            ));
        }
        let inner: usize = rest.iter().product();
        let mut shape = vec![1];
        shape.extend_from_slice(rest);
        Ok(Self {
            shape,
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        })
    }

    /// Stacks tensors of identical shape along the leading axis (which must be 1 or absent).
    pub fn stack_axis0(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack_axis0", "no tensors given"))?;
        let mut inner = first.shape.clone();
        let mut lead = 0;
        if inner.first() == Some(&1) {
            inner.remove(0);
        }
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            let mut s = p.shape.clone();
            if s.first() == Some(&1) && s.len() == inner.len() + 1 {
                s.remove(0);
            }
            if s != inner {
                return Err(Error::shape(
                    "stack_axis0",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            data.extend_from_slice(&p.data);
            lead += 1;
        }
        let mut shape = vec![lead];
        shape.extend(inner);
        Ok(Self { shape, data })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.rank() + 8 * self.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Decodes one tensor record. Truncated or malformed input is reported as
    /// [`Error::Format`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let ctx = "MNT1 tensor";
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, ctx, "magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::format(ctx, format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        read_exact(r, &mut b4, ctx, "rank")?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 16 {
            return Err(Error::format(ctx, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        let mut b8 = [0u8; 8];
        for _ in 0..rank {
            read_exact(r, &mut b8, ctx, "dims")?;
            let d = u64::from_le_bytes(b8);
            count = count
                .checked_mul(d)
                .filter(|&c| c <= MAX_DECODE_ELEMENTS)
                .ok_or_else(|| Error::format(ctx, "element count overflow"))?;
            shape.push(d as usize);
        }
        let mut payload = vec![0u8; count as usize * 8];
        read_exact(r, &mut payload, ctx, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format(
                "MNT1 tensor",
                format!("{} trailing bytes", cursor.len()),
            ));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }
}

pub(crate) fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    ctx: &str,
    what: &str,
) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(ctx, format!("truncated while reading {what}")),
        _ => Error::format(ctx, format!("failed reading {what}: {e}")),
    })
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:.6}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn reshape_round_trip_is_exact() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let back = t.reshaped(&[3, 2]).unwrap().reshaped(&[2, 3]).unwrap();
        assert!(back.bit_eq(&t));
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn encode_layout_is_little_endian() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"MNT1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &(-2.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn truncated_bytes_are_a_format_error() {
        let t = Tensor::ones(&[3, 3]);
        let bytes = t.to_bytes();
        for cut in [0, 3, 7, 12, bytes.len() - 1] {
            match Tensor::from_bytes(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut {cut}: expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Tensor::ones(&[1]).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn stack_and_index_are_inverse() {
        let a = Tensor::from_fn(&[1, 2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[1, 2, 2], |i| 10.0 + i as f64);
        let s = Tensor::stack_axis0(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert!(s.index_axis0(0).unwrap().bit_eq(&a));
        assert!(s.index_axis0(1).unwrap().bit_eq(&b));
    }
}
