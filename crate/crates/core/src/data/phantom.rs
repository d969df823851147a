//! Ellipse phantoms with shared geometry and contrast-specific intensities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-tissue intensities for T1-like contrast; index 0 is background.
pub const DEFAULT_T1_LUT: [f64; 7] = [0.0, 0.95, 0.70, 0.45, 0.25, 0.85, 0.55];
/// Per-tissue intensities for T2-like contrast; index 0 is background.
pub const DEFAULT_T2_LUT: [f64; 7] = [0.0, 0.35, 0.55, 0.95, 0.75, 0.15, 0.45];

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// High-resolution side length.
    pub size: usize,
    /// Inclusive range for the number of interior ellipses.
    pub num_shapes: (usize, usize),
    pub seed: u64,
    pub contrast_t1: Vec<f64>,
    pub contrast_t2: Vec<f64>,
    /// Peak relative deviation of the smooth multiplicative bias field.
    pub bias_amplitude: f64,
}

impl PhantomSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            num_shapes: (4, 10),
            seed,
            contrast_t1: DEFAULT_T1_LUT.to_vec(),
            contrast_t2: DEFAULT_T2_LUT.to_vec(),
            bias_amplitude: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::Config(format!("phantom size {} too small", self.size)));
        }
        if self.contrast_t1.len() != self.contrast_t2.len() || self.contrast_t1.len() < 3 {
            return Err(Error::Config(
                "contrast tables must have equal length with at least two tissues".into(),
            ));
        }
        let in_unit = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
        if !in_unit(&self.contrast_t1) || !in_unit(&self.contrast_t2) {
            return Err(Error::Config("contrast intensities must lie in [0, 1]".into()));
        }
        if self.num_shapes.0 > self.num_shapes.1 {
            return Err(Error::Config("num_shapes range is empty".into()));
        }
        if !(0.0..0.5).contains(&self.bias_amplitude) {
            return Err(Error::Config("bias amplitude must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    label: usize,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.cx, v - self.cy);
        let p = du * self.cos + dv * self.sin;
        let q = -du * self.sin + dv * self.cos;
        (p / self.a).powi(2) + (q / self.b).powi(2) <= 1.0
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, label: usize, radius: f64, axes: (f64, f64)) -> Ellipse {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Ellipse {
        cx: r * t.cos(),
        cy: r * t.sin(),
        a: rng.random_range(axes.0..axes.1),
        b: rng.random_range(axes.0..axes.1),
        cos: angle.cos(),
        sin: angle.sin(),
        label,
    }
}

/// Tissue labels plus one image per contrast, each `[size, size]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub labels: Vec<usize>,
    pub x_t1: Tensor,
    pub x_t2: Tensor,
}

/// Smooth field `1 + amp * (c1 u + c2 v + c3 u v) / 3` on `[-1, 1]^2`.
fn bias_field(rng: &mut ChaCha8Rng, amplitude: f64) -> impl Fn(f64, f64) -> f64 {
    let c: [f64; 3] = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    move |u, v| 1.0 + amplitude * (c[0] * u + c[1] * v + c[2] * u * v) / 3.0
}

fn normalize_max(img: &mut [f64]) {
    let max = img.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in img {
            *v /= max;
        }
    }
}

/// Generates a phantom pair. Both contrasts share one label map; they differ
/// only through their intensity tables and independent bias fields.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tissues = spec.contrast_t1.len() - 1;
    let mut shapes = Vec::new();

    // outer head and inner parenchyma
    let head_a = rng.random_range(0.78..0.92);
    let head_b = rng.random_range(0.82..0.95);
    let tilt = rng.random_range(-0.3..0.3f64);
    let (cx, cy) = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
    shapes.push(Ellipse { cx, cy, a: head_a, b: head_b, cos: tilt.cos(), sin: tilt.sin(), label: 1 });
    let shrink = rng.random_range(0.86..0.92);
    shapes.push(Ellipse {
        cx,
        cy,
        a: head_a * shrink,
        b: head_b * shrink,
        cos: tilt.cos(),
        sin: tilt.sin(),
        label: 2.min(tissues),
    });
    let count = rng.random_range(spec.num_shapes.0..=spec.num_shapes.1);
    for _ in 0..count {
        let label = rng.random_range(1..=tissues);
        shapes.push(random_ellipse(&mut rng, label, 0.55, (0.06, 0.32)));
    }

    let n = spec.size;
    let coord = |i: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    let mut labels = vec![0usize; n * n];
    for y in 0..n {
        for x in 0..n {
            let (u, v) = (coord(x), coord(y));
            for s in &shapes {
                if s.contains(u, v) {
                    labels[y * n + x] = s.label;
                }
            }
        }
    }

    let bias_t1 = bias_field(&mut rng, spec.bias_amplitude);
    let bias_t2 = bias_field(&mut rng, spec.bias_amplitude);
    let mut t1 = vec![0.0; n * n];
    let mut t2 = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (u, v) = (coord(x), coord(y));
            let l = labels[y * n + x];
            t1[y * n + x] = spec.contrast_t1[l] * bias_t1(u, v);
            t2[y * n + x] = spec.contrast_t2[l] * bias_t2(u, v);
        }
    }
    normalize_max(&mut t1);
    normalize_max(&mut t2);
    Ok(Phantom {
        labels,
        x_t1: Tensor::new(vec![n, n], t1)?,
        x_t2: Tensor::new(vec![n, n], t2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pixels whose right or lower neighbour differs by more than `tol`.
    fn edge_mask(img: &Tensor, tol: f64) -> Vec<bool> {
        let n = img.shape()[0];
        let d = img.data();
        (0..n * n)
            .map(|i| {
                let (y, x) = (i / n, i % n);
                (x + 1 < n && (d[i] - d[i + 1]).abs() > tol) || (y + 1 < n && (d[i] - d[i + n]).abs() > tol)
            })
            .collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec::new(32, 99);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert!(a.x_t1.bit_eq(&b.x_t1) && a.x_t2.bit_eq(&b.x_t2));
        let c = generate_phantom(&PhantomSpec::new(32, 100)).unwrap();
        assert!(!a.x_t1.bit_eq(&c.x_t1));
    }

    #[test]
    fn shared_geometry_gives_identical_edge_masks() {
        for seed in 0..10 {
            let p = generate_phantom(&PhantomSpec::new(48, seed)).unwrap();
            assert_eq!(edge_mask(&p.x_t1, 0.04), edge_mask(&p.x_t2, 0.04), "seed {seed}");
            let support_t1: Vec<bool> = p.x_t1.data().iter().map(|&v| v > 0.0).collect();
            let support_t2: Vec<bool> = p.x_t2.data().iter().map(|&v| v > 0.0).collect();
            assert_eq!(support_t1, support_t2);
        }
    }

    #[test]
    fn intensities_in_unit_range() {
        let p = generate_phantom(&PhantomSpec::new(40, 5)).unwrap();
        for img in [&p.x_t1, &p.x_t2] {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((img.data().iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = PhantomSpec::new(32, 0);
        s.contrast_t2.pop();
        assert!(generate_phantom(&s).is_err());
        let mut s = PhantomSpec::new(32, 0);
        s.contrast_t1[1] = 1.5;
        assert!(generate_phantom(&s).is_err());
    }
}
