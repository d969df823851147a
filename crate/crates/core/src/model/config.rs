use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Architectural hyperparameters and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MINetConfig {
    /// Residual groups per branch (stages).
    pub groups: usize,
    /// Feature channels.
    pub channels: usize,
    /// Residual channel-attention blocks per group.
    pub blocks: usize,
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    /// Weight of the T2 reconstruction term.
    pub alpha: f64,
    /// Weight of the auxiliary T1 reconstruction term.
    pub beta: f64,
}

impl Default for MINetConfig {
    fn default() -> Self {
        Self {
            groups: 3,
            channels: 16,
            blocks: 2,
            scale: 2,
            reduction: 4,
            alpha: 0.3,
            beta: 0.7,
        }
    }
}

impl MINetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Config("groups must be at least 1".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        if self.channels == 0 || self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "channels ({}) must be a positive multiple of reduction ({})",
                self.channels, self.reduction
            )));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with a positive sum, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            groups: kv.get_or("groups", d.groups)?,
            channels: kv.get_or("channels", d.channels)?,
            blocks: kv.get_or("blocks", d.blocks)?,
            scale: kv.get_or("scale", d.scale)?,
            reduction: kv.get_or("reduction", d.reduction)?,
            alpha: kv.get_or("alpha", d.alpha)?,
            beta: kv.get_or("beta", d.beta)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("groups", self.groups);
        kv.set("channels", self.channels);
        kv.set("blocks", self.blocks);
        kv.set("scale", self.scale);
        kv.set("reduction", self.reduction);
        kv.set("alpha", self.alpha);
        kv.set("beta", self.beta);
    }
}

/// Ablation variants of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// The complete model.
    Full,
    /// No auxiliary contrast: the T1 input is zeroed and the T1 loss term dropped.
    NoAux,
    /// No multi-stage integration: `H` is left out of the reconstruction sum.
    NoInt,
    /// No channel-spatial attention: raw final-stage features replace `G`.
    NoAtt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoAux, Variant::NoInt, Variant::NoAtt];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAux => "no_aux",
            Variant::NoInt => "no_int",
            Variant::NoAtt => "no_att",
        }
    }

    pub fn uses_aux(self) -> bool {
        self != Variant::NoAux
    }

    pub fn uses_integration(self) -> bool {
        self != Variant::NoInt
    }

    pub fn uses_attention(self) -> bool {
        self != Variant::NoAtt
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected full, no_aux, no_int or no_att")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(MINetConfig::default().validate().is_ok());
        let bad = [
            MINetConfig { groups: 0, ..Default::default() },
            MINetConfig { channels: 10, reduction: 4, ..Default::default() },
            MINetConfig { scale: 3, ..Default::default() },
            MINetConfig { alpha: 0.0, beta: 0.0, ..Default::default() },
            MINetConfig { alpha: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn kv_round_trip() {
        let cfg = MINetConfig { groups: 6, channels: 64, scale: 4, ..Default::default() };
        let mut kv = KeyValues::new();
        cfg.write_kv(&mut kv);
        assert_eq!(MINetConfig::from_kv(&kv).unwrap(), cfg);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }
}
