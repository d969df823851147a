use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::{MINetConfig, Variant};

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
}

/// Named parameter tensors in a fixed manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct MINetParams {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

/// Parameter names for the residual group at `stage` (1-based) of `branch` ("t1"/"t2").
pub fn group_prefix(branch: &str, stage: usize) -> String {
    format!("rg_{branch}.{stage}")
}

/// Deterministic per-parameter seed so variants share identical weights for
/// the tensors they have in common.
fn param_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn spec_list(cfg: &MINetConfig, variant: Variant) -> Vec<(String, Vec<usize>, Init)> {
    let c = cfg.channels;
    let r2 = cfg.scale * cfg.scale;
    let red = c / cfg.reduction;
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut conv = |name: String, o: usize, i: usize, k: usize, zero: bool| {
        let init = if zero { Init::Zeros } else { Init::FanIn(i * k * k) };
        out.push((format!("{name}.w"), vec![o, i, k, k], init));
        out.push((format!("{name}.b"), vec![o], init));
    };
    conv("shallow_t1".into(), c, 1, 3, false);
    conv("shallow_t2".into(), c, 1, 3, false);
    conv("upsample".into(), c * r2, c, 3, false);
    for stage in 1..=cfg.groups {
        for branch in ["t1", "t2"] {
            let p = group_prefix(branch, stage);
            for k in 0..cfg.blocks {
                conv(format!("{p}.block{k}.conv1"), c, c, 3, false);
                conv(format!("{p}.block{k}.conv2"), c, c, 3, false);
                conv(format!("{p}.block{k}.ca_down"), red, c, 1, false);
                conv(format!("{p}.block{k}.ca_up"), c, red, 1, false);
            }
            conv(format!("{p}.tail"), c, c, 3, false);
        }
        conv(format!("fuse.{stage}"), c, 2 * c, 1, false);
    }
    if variant.uses_integration() {
        conv("int.reduce".into(), c, 2 * cfg.groups * c, 1, true);
    }
    if variant.uses_aux() {
        conv("rec_t1".into(), 1, c, 3, false);
    }
    conv("rec_t2".into(), 1, c, 3, false);
    if variant.uses_integration() {
        out.push(("int.gamma".into(), vec![1], Init::Zeros));
    }
    if variant.uses_attention() {
        let branches: &[&str] = if variant.uses_aux() { &["t1", "t2"] } else { &["t2"] };
        for b in branches {
            out.push((format!("att_{b}.w"), vec![1, 1, 3, 3, 3], Init::FanIn(27)));
            out.push((format!("att_{b}.b"), vec![1], Init::FanIn(27)));
            out.push((format!("att_{b}.lambda"), vec![1], Init::Zeros));
        }
    }
    out
}

impl MINetParams {
    /// Fresh parameters. Gates (`int.gamma`, `att_*.lambda`) and the
    /// integration reducer start at exactly zero.
    pub fn init(cfg: &MINetConfig, variant: Variant, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let entries = spec_list(cfg, variant)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, &name));
                        Tensor::uniform(&shape, -bound, bound, &mut rng)
                    }
                };
                (name, t)
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter {name}")));
            }
        }
        Ok(Self { entries, index })
    }

    /// The manifest (names and shapes) a config/variant pair expects.
    pub fn manifest(cfg: &MINetConfig, variant: Variant) -> Vec<(String, Vec<usize>)> {
        spec_list(cfg, variant).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Checks names and shapes against the expected manifest.
    pub fn check_manifest(&self, cfg: &MINetConfig, variant: Variant) -> Result<()> {
        let expected = Self::manifest(cfg, variant);
        if expected.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors for {variant}, found {}",
                expected.len(),
                self.entries.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&self.entries) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {en} {es:?}, found {n} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn bit_eq(&self, other: &MINetParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, x), (b, y))| a == b && x.bit_eq(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates_and_integration_reducer_start_at_zero() {
        let p = MINetParams::init(&MINetConfig::default(), Variant::Full, 7).unwrap();
        for name in ["int.gamma", "att_t1.lambda", "att_t2.lambda", "int.reduce.w", "int.reduce.b"] {
            assert!(p.get(name).unwrap().data().iter().all(|&x| x == 0.0), "{name}");
        }
        assert!(p.all_finite());
        assert!(p.get("rec_t2.w").unwrap().max_abs() > 0.0);
    }

    #[test]
    fn shared_tensors_identical_across_variants() {
        let cfg = MINetConfig::default();
        let full = MINetParams::init(&cfg, Variant::Full, 3).unwrap();
        for v in [Variant::NoAux, Variant::NoInt, Variant::NoAtt] {
            let other = MINetParams::init(&cfg, v, 3).unwrap();
            for (name, t) in other.iter() {
                assert!(full.get(name).unwrap().bit_eq(t), "{v}: {name}");
            }
        }
    }

    #[test]
    fn seeds_change_weights() {
        let cfg = MINetConfig::default();
        let a = MINetParams::init(&cfg, Variant::Full, 1).unwrap();
        let b = MINetParams::init(&cfg, Variant::Full, 2).unwrap();
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&MINetParams::init(&cfg, Variant::Full, 1).unwrap()));
    }

    #[test]
    fn manifest_check_catches_mismatch() {
        let cfg = MINetConfig::default();
        let p = MINetParams::init(&cfg, Variant::NoInt, 1).unwrap();
        assert!(p.check_manifest(&cfg, Variant::NoInt).is_ok());
        assert!(p.check_manifest(&cfg, Variant::Full).is_err());
    }
}
