#![allow(dead_code)]

use minet_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// HR T1 `[b,1,rn,rn]` and LR T2 `[b,1,n,n]` with intensities in `[0, 1)`.
pub fn image_pair(b: usize, n: usize, r: usize, seed: u64) -> (Tensor, Tensor) {
    let mut g = rng(seed);
    let x = Tensor::uniform(&[b, 1, r * n, r * n], 0.0, 1.0, &mut g);
    let y = Tensor::uniform(&[b, 1, n, n], 0.0, 1.0, &mut g);
    (x, y)
}

/// Row-softmax of pairwise stage-feature dot products, computed directly
/// from `[B, S*C, H, W]` features: `S[b][i][j]`.
pub fn brute_force_affinity(features: &Tensor, stages: usize) -> Vec<Vec<Vec<f64>>> {
    brute_force_affinity_scaled(features, stages, 1.0)
}

/// Row-softmax of `logit_scale` times the pairwise dot products.
pub fn brute_force_affinity_scaled(features: &Tensor, stages: usize, logit_scale: f64) -> Vec<Vec<Vec<f64>>> {
    let s = features.shape();
    let (b, per) = (s[0], s[1] / stages * s[2] * s[3]);
    let d = features.data();
    (0..b)
        .map(|bi| {
            let base = bi * stages * per;
            (0..stages)
                .map(|i| {
                    let dots: Vec<f64> = (0..stages)
                        .map(|j| logit_scale * (0..per).map(|k| d[base + i * per + k] * d[base + j * per + k]).sum::<f64>())
                        .collect();
                    let m = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = dots.iter().map(|v| (v - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / z).collect()
                })
                .collect()
        })
        .collect()
}
