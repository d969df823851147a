//! Seeded train/val/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_SPLIT_TOTAL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Usage(format!("unknown split {s:?} (expected train, val or test)"))),
        }
    }
}

/// Sample seeds per split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    pub fn get(&self, which: SplitName) -> &[u64] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Sizes for a 7:1:2 partition; val and test take at least one sample each.
pub fn split_sizes(total: usize) -> (usize, usize, usize) {
    let train = ((total as f64) * 0.7).round() as usize;
    let val = (((total as f64) * 0.1).round() as usize).max(1);
    let test = total - train - val;
    (train, val, test)
}

/// SplitMix64 finaliser; derives per-sample seeds from a dataset seed.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th sample of a dataset generated with `dataset_seed`.
pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    splitmix64(dataset_seed ^ splitmix64(index as u64))
}

/// Shuffles the sample indices `0..total` with `seed` and cuts them 7:1:2.
/// Each part is returned in ascending order.
pub fn make_index_split(total: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if total < MIN_SPLIT_TOTAL {
        return Err(Error::Input(format!("need at least {MIN_SPLIT_TOTAL} samples to split, got {total}")));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed)));
    let (tr, va, _) = split_sizes(total);
    let mut test = idx.split_off(tr + va);
    let mut val = idx.split_off(tr);
    let mut train = idx;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}

/// Partition of the samples `sample_seed(seed, 0..total)`.
pub fn make_split(total: usize, seed: u64) -> Result<DatasetSplit> {
    let [train, val, test] = make_index_split(total, seed)?;
    let seeds = |v: Vec<usize>| v.into_iter().map(|i| sample_seed(seed, i)).collect();
    Ok(DatasetSplit { train: seeds(train), val: seeds(val), test: seeds(test) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn ten_gives_seven_one_two() {
        let s = make_split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn disjoint_cover_and_deterministic() {
        for total in [10, 11, 37, 200] {
            let [a, b, c] = make_index_split(total, 9).unwrap();
            let all: BTreeSet<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            assert_eq!(all.len(), total);
            assert_eq!(all, (0..total).collect());
            assert_eq!(make_index_split(total, 9).unwrap(), [a, b, c]);
        }
        assert_ne!(make_split(50, 1).unwrap(), make_split(50, 2).unwrap());
    }

    #[test]
    fn too_small_rejected() {
        assert!(make_split(9, 0).is_err());
    }

    #[test]
    fn sample_seeds_distinct() {
        let seeds: BTreeSet<u64> = (0..1000).map(|i| sample_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
