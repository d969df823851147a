use std::fs;
use std::path::Path;

use minet_core::data::dataset::{PREVIEW_DIR, SPLIT_MANIFEST_FILE};
use minet_core::data::sample::{pgm_bytes, read_pgm};
use minet_core::data::{
    bicubic_upsample, degrade, generate_dataset, generate_phantom, generate_sample, make_split, Dataset,
    DatasetConfig, DegradeMethod, PhantomSpec, SampleSpec, SamplePair, SplitName,
};
use minet_core::train::psnr;
use proptest::prelude::*;

fn spec(method: DegradeMethod) -> SampleSpec {
    SampleSpec { size: 32, scale: 2, method }
}

fn method() -> impl Strategy<Value = DegradeMethod> {
    prop_oneof![Just(DegradeMethod::KspaceTruncation), Just(DegradeMethod::BicubicDecimation)]
}

fn rms(t: &minet_core::Tensor) -> f64 {
    (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt()
}

/// KL divergence between 16-bin intensity histograms, with add-one smoothing.
fn histogram_kl(a: &minet_core::Tensor, b: &minet_core::Tensor) -> f64 {
    let hist = |t: &minet_core::Tensor| -> Vec<f64> {
        let mut h = vec![1.0; 16];
        for &v in t.data() {
            h[((v * 16.0) as usize).min(15)] += 1.0;
        }
        let total: f64 = h.iter().sum();
        h.into_iter().map(|c| c / total).collect()
    };
    let (p, q) = (hist(a), hist(b));
    p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_are_pure_functions_of_their_seed(seed in any::<u64>(), m in method()) {
        let a = generate_sample(&spec(m), seed).unwrap();
        let b = generate_sample(&spec(m), seed).unwrap();
        prop_assert!(a.bit_eq(&b));
        prop_assert!(SamplePair::from_bytes(&a.to_bytes()).unwrap().bit_eq(&a));
    }

    #[test]
    fn bicubic_baseline_clears_the_sanity_floor(seed in any::<u64>(), m in method()) {
        let s = generate_sample(&spec(m), seed).unwrap();
        let up = bicubic_upsample(&s.y_t2, 2).unwrap();
        let db = psnr(&up, &s.x_t2, 1.0).unwrap();
        prop_assert!(db.is_finite() && db > 5.0, "psnr {db}");
    }

    #[test]
    fn kspace_truncation_does_not_add_energy(seed in any::<u64>(), r in prop_oneof![Just(2usize), Just(4)]) {
        let p = generate_phantom(&PhantomSpec::new(32, seed)).unwrap();
        let lr = degrade(&p.x_t2, r, DegradeMethod::KspaceTruncation).unwrap();
        prop_assert_eq!(lr.shape(), &[32 / r, 32 / r][..]);
        prop_assert!(rms(&lr) <= rms(&p.x_t2) + 1e-12);
        prop_assert!(lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn contrasts_have_different_intensity_distributions(seed in any::<u64>()) {
        let p = generate_phantom(&PhantomSpec::new(32, seed)).unwrap();
        prop_assert!(histogram_kl(&p.x_t1, &p.x_t2) > 0.0);
    }

    #[test]
    fn splits_are_deterministic_and_partition(total in 10usize..300, seed in any::<u64>()) {
        let a = make_split(total, seed).unwrap();
        prop_assert_eq!(&a, &make_split(total, seed).unwrap());
        prop_assert_eq!(a.total(), total);
        let mut all: Vec<u64> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), total);
    }

    #[test]
    fn pgm_round_trip_is_quantisation_exact(seed in any::<u64>()) {
        let s = generate_sample(&spec(DegradeMethod::KspaceTruncation), seed).unwrap();
        let bytes = pgm_bytes(&s.x_t1).unwrap();
        let back = read_pgm(&bytes).unwrap();
        prop_assert_eq!(pgm_bytes(&back).unwrap(), bytes);
        let max_err = back.data().iter().zip(s.x_t1.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(max_err <= 0.5 / 255.0 + 1e-12);
    }
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ten_samples_land_on_disk_as_seven_one_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig { count: 10, sample: spec(DegradeMethod::KspaceTruncation), seed: 4 };
    let split = generate_dataset(dir.path(), &cfg).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (7, 1, 2));
    for which in SplitName::ALL {
        let manifest = fs::read_to_string(dir.path().join(which.as_str()).join(SPLIT_MANIFEST_FILE)).unwrap();
        let seeds: Vec<u64> = manifest.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(&seeds, split.get(which));
        for seed in seeds {
            assert!(dir.path().join(which.as_str()).join(format!("{seed}.mnt1")).is_file());
        }
    }
    assert!(fs::read_dir(dir.path().join(PREVIEW_DIR)).unwrap().count() > 0);

    let ds = Dataset::open(dir.path()).unwrap();
    let train = ds.load_split(SplitName::Train).unwrap();
    for s in &train {
        assert!(s.bit_eq(&generate_sample(&cfg.sample, s.seed).unwrap()));
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = DatasetConfig { count: 12, sample: spec(DegradeMethod::BicubicDecimation), seed: 9 };
    generate_dataset(a.path(), &cfg).unwrap();
    generate_dataset(b.path(), &cfg).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}
