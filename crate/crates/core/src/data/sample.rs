//! Sample pairs, their on-disk container and PGM previews.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::degrade::{degrade, DegradeMethod};
use super::phantom::{generate_phantom, PhantomSpec};

/// One training triplet: HR reference contrast, LR target contrast and its HR ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// `[rN, rN]`
    pub x_t1: Tensor,
    /// `[N, N]`
    pub y_t2: Tensor,
    /// `[rN, rN]`
    pub x_t2: Tensor,
    pub seed: u64,
}

impl SamplePair {
    pub fn scale(&self) -> usize {
        self.x_t2.shape()[0] / self.y_t2.shape()[0].max(1)
    }

    pub fn bit_eq(&self, other: &SamplePair) -> bool {
        self.seed == other.seed
            && self.x_t1.bit_eq(&other.x_t1)
            && self.y_t2.bit_eq(&other.y_t2)
            && self.x_t2.bit_eq(&other.x_t2)
    }

    fn validate(&self) -> Result<()> {
        let hr = self.x_t2.shape();
        let lr = self.y_t2.shape();
        if hr.len() != 2 || lr.len() != 2 || self.x_t1.shape() != hr || lr[0] == 0 || !hr[0].is_multiple_of(lr[0]) || hr[1] != hr[0] || lr[1] != lr[0] {
            return Err(Error::format(
                "sample",
                format!("inconsistent shapes x_t1 {:?}, y_t2 {:?}, x_t2 {:?}", self.x_t1.shape(), lr, hr),
            ));
        }
        Ok(())
    }

    /// `u64` seed followed by the three tensors as MNT1 records.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.seed.to_le_bytes())?;
        self.x_t1.write_to(w)?;
        self.y_t2.write_to(w)?;
        self.x_t2.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut seed = [0u8; 8];
        crate::tensor::read_exact(r, &mut seed, "sample", "seed")?;
        let pair = SamplePair {
            seed: u64::from_le_bytes(seed),
            x_t1: Tensor::read_from(r)?,
            y_t2: Tensor::read_from(r)?,
            x_t2: Tensor::read_from(r)?,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let pair = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format("sample", format!("{} trailing bytes", cursor.len())));
        }
        Ok(pair)
    }
}

/// Parameters shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    /// HR side length.
    pub size: usize,
    pub scale: usize,
    pub method: DegradeMethod,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || !self.size.is_multiple_of(self.scale) {
            return Err(Error::Input(format!("size {} is not divisible by scale {}", self.size, self.scale)));
        }
        Ok(())
    }
}

pub fn generate_sample(spec: &SampleSpec, seed: u64) -> Result<SamplePair> {
    spec.validate()?;
    let phantom = generate_phantom(&PhantomSpec::new(spec.size, seed))?;
    let y_t2 = degrade(&phantom.x_t2, spec.scale, spec.method)?;
    Ok(SamplePair { x_t1: phantom.x_t1, y_t2, x_t2: phantom.x_t2, seed })
}

pub fn save_sample(path: &Path, pair: &SamplePair) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    pair.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: &Path) -> Result<SamplePair> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let pair = SamplePair::read_from(&mut r)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(pair),
        Ok(_) => Err(Error::format(path.display().to_string(), "trailing bytes after sample")),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// 8-bit quantisation used for previews: `round(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary (P5) PGM bytes for a `[h, w]` image.
pub fn pgm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let &[h, w] = img.shape() else {
        return Err(Error::shape("pgm", format!("expected a 2-D image, got {:?}", img.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, pgm_bytes(img)?).map_err(|e| Error::io(path, e))
}

/// Parses a binary PGM with maxval 255 back to `[0, 1]` values.
pub fn read_pgm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |d: &str| Error::format("pgm", d.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if body.len() != w * h {
        return Err(bad("pixel data length mismatch"));
    }
    Tensor::new(vec![h, w], body.iter().map(|&b| b as f64 / 255.0).collect())
}
