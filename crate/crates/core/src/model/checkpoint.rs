//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MINT" | u32 version
//! u32 config_len | config bytes (flat key=value UTF-8)
//! u32 count | count x (u32 name_len | name | u32 rank | rank x u64 dim)
//! f64 payloads of every tensor, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::{read_exact, Tensor};

use super::params::MINetParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MINT";
pub const CHECKPOINT_VERSION: u32 = 1;

const CTX: &str = "MINT checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: KeyValues,
    pub params: MINetParams,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, CTX, what)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R, what: &str, limit: usize) -> Result<String> {
    let len = get_u32(r, what)? as usize;
    if len > limit {
        return Err(Error::format(CTX, format!("{what} length {len} exceeds {limit}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, CTX, what)?;
    String::from_utf8(buf).map_err(|_| Error::format(CTX, format!("{what} is not UTF-8")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config.to_text());
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in self.params.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, CTX, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(CTX, format!("bad magic {magic:?}")));
        }
        let version = get_u32(r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(CTX, format!("unsupported version {version}")));
        }
        let config = KeyValues::parse(&get_str(r, "config", 1 << 20)?)?;
        let count = get_u32(r, "parameter count")? as usize;
        if count > 1 << 16 {
            return Err(Error::format(CTX, format!("implausible parameter count {count}")));
        }
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name = get_str(r, "parameter name", 1 << 12)?;
            let rank = get_u32(r, "rank")? as usize;
            if rank > 8 {
                return Err(Error::format(CTX, format!("implausible rank {rank} for {name}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(r, &mut b, CTX, "dims")?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            manifest.push((name, dims));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, dims) in manifest {
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::format(CTX, format!("implausible size for {name}")))?;
            let mut buf = vec![0u8; n * 8];
            read_exact(r, &mut buf, CTX, &format!("payload of {name}"))?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(dims, data)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::format(CTX, e.to_string()))? != 0 {
            return Err(Error::format(CTX, "trailing bytes after payload"));
        }
        Ok(Self {
            config,
            params: MINetParams::from_entries(entries)?,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        Self::read_from(&mut cursor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MINetConfig, Variant};

    fn sample() -> Checkpoint {
        let cfg = MINetConfig { groups: 1, channels: 4, blocks: 1, ..Default::default() };
        let mut kv = KeyValues::new();
        cfg.write_kv(&mut kv);
        kv.set("variant", Variant::Full);
        Checkpoint {
            config: kv,
            params: MINetParams::init(&cfg, Variant::Full, 5).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, ck.config);
        assert!(back.params.bit_eq(&ck.params));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"MINT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = sample().to_bytes();
        for cut in [2, 6, 20, bytes.len() / 2, bytes.len() - 3] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format { .. })));
    }
}
