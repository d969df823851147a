//! On-disk dataset layout: `<root>/<split>/<seed>.mnt1`, one `split.txt`
//! seed list per split, `dataset.cfg` at the root and PGM previews under
//! `<root>/preview/`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::parallel;

use super::degrade::DegradeMethod;
use super::sample::{generate_sample, load_sample, save_sample, write_pgm, SamplePair, SampleSpec};
use super::split::{make_split, DatasetSplit, SplitName};

pub const DATASET_CONFIG_FILE: &str = "dataset.cfg";
pub const SPLIT_MANIFEST_FILE: &str = "split.txt";
pub const PREVIEW_DIR: &str = "preview";
/// Previews written per split; the rest are skipped to keep dataset dirs small.
pub const PREVIEWS_PER_SPLIT: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub sample: SampleSpec,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("count", self.count);
        kv.set("size", self.sample.size);
        kv.set("scale", self.sample.scale);
        kv.set("degrade", self.sample.method);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let need = |k: &str| Error::Config(format!("dataset config is missing {k:?}"));
        Ok(Self {
            count: kv.get("count")?.ok_or_else(|| need("count"))?,
            sample: SampleSpec {
                size: kv.get("size")?.ok_or_else(|| need("size"))?,
                scale: kv.get("scale")?.ok_or_else(|| need("scale"))?,
                method: kv.get_or("degrade", DegradeMethod::default())?,
            },
            seed: kv.get("seed")?.ok_or_else(|| need("seed"))?,
        })
    }
}

fn sample_path(root: &Path, split: SplitName, seed: u64) -> PathBuf {
    root.join(split.as_str()).join(format!("{seed}.mnt1"))
}

/// Generates and writes a complete dataset. Returns the split that was written.
pub fn generate_dataset(root: &Path, cfg: &DatasetConfig) -> Result<DatasetSplit> {
    cfg.sample.validate()?;
    let split = make_split(cfg.count, cfg.seed)?;
    let preview = root.join(PREVIEW_DIR);
    for dir in SplitName::ALL.iter().map(|s| root.join(s.as_str())).chain([preview.clone()]) {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let cfg_path = root.join(DATASET_CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_kv().to_text()).map_err(|e| Error::io(&cfg_path, e))?;

    for which in SplitName::ALL {
        let seeds = split.get(which);
        let results = parallel::map_indices(seeds.len(), |i| -> Result<()> {
            let pair = generate_sample(&cfg.sample, seeds[i])?;
            save_sample(&sample_path(root, which, seeds[i]), &pair)?;
            if i < PREVIEWS_PER_SPLIT {
                let stem = preview.join(format!("{which}_{}", seeds[i]));
                write_pgm(&stem.with_extension("t1.pgm"), &pair.x_t1)?;
                write_pgm(&stem.with_extension("lr.pgm"), &pair.y_t2)?;
                write_pgm(&stem.with_extension("t2.pgm"), &pair.x_t2)?;
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        let manifest: String = seeds.iter().map(|s| format!("{s}\n")).collect();
        let path = root.join(which.as_str()).join(SPLIT_MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }
    Ok(split)
}

/// Handle on an existing dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let cfg_path = root.join(DATASET_CONFIG_FILE);
        if !cfg_path.is_file() {
            return Err(Error::DatasetMissing(root.to_path_buf()));
        }
        let config = DatasetConfig::from_kv(&KeyValues::load(&cfg_path)?)?;
        let mut lists = Vec::new();
        for which in SplitName::ALL {
            let path = root.join(which.as_str()).join(SPLIT_MANIFEST_FILE);
            if !path.is_file() {
                return Err(Error::DatasetMissing(path));
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let seeds = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::format(path.display().to_string(), format!("bad seed line {l:?}")))
                })
                .collect::<Result<Vec<u64>>>()?;
            lists.push(seeds);
        }
        let test = lists.pop().unwrap_or_default();
        let val = lists.pop().unwrap_or_default();
        let train = lists.pop().unwrap_or_default();
        Ok(Self { root: root.to_path_buf(), config, split: DatasetSplit { train, val, test } })
    }

    pub fn scale(&self) -> usize {
        self.config.sample.scale
    }

    /// Loads every sample of a split, in manifest order.
    pub fn load_split(&self, which: SplitName) -> Result<Vec<SamplePair>> {
        let seeds = self.split.get(which);
        let loaded = parallel::map_slice(seeds, |&seed| {
            let path = sample_path(&self.root, which, seed);
            if !path.is_file() {
                return Err(Error::DatasetMissing(path));
            }
            load_sample(&path)
        });
        loaded.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_then_open() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            count: 10,
            sample: SampleSpec { size: 16, scale: 2, method: DegradeMethod::KspaceTruncation },
            seed: 4,
        };
        let split = generate_dataset(dir.path(), &cfg).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.split, split);
        assert_eq!(ds.config, cfg);
        let test = ds.load_split(SplitName::Test).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test[0].seed, split.test[0]);
        assert!(dir.path().join("preview").read_dir().unwrap().count() > 0);
    }

    #[test]
    fn missing_dataset_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(&dir.path().join("nope")), Err(Error::DatasetMissing(_))));
    }
}
