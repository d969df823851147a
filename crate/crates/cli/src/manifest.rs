//! `manifest.txt`: what produced a run directory and what it contains.

use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use minet_core::config::KeyValues;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: KeyValues,
    pub seed: Option<u64>,
    /// File names relative to the run directory.
    pub artifacts: Vec<String>,
    pub duration: Duration,
}

impl RunManifest {
    pub fn new(command: &str, config: KeyValues, seed: Option<u64>) -> Self {
        Self { command: command.to_string(), config, seed, artifacts: Vec::new(), duration: Duration::ZERO }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("command", &self.command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            kv.set("seed", seed);
        }
        kv.set("artifacts", self.artifacts.join(","));
        kv.set("duration_s", format!("{:.3}", self.duration.as_secs_f64()));
        for key in self.config.keys() {
            if let Some(v) = self.config.get_str(key) {
                kv.set(&format!("config.{key}"), v);
            }
        }
        kv
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_kv().to_text()).with_context(|| format!("writing {}", path.display()))
    }
}
