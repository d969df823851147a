//! Central finite-difference gradient checks.
//!
//! A check builds a graph from a set of input tensors, contracts its output
//! with a fixed random tensor to get a scalar, and compares the tape's
//! gradient against `(f(x + eps) - f(x - eps)) / (2 eps)` on sampled
//! coordinates. The error measure is `|analytic - numeric| / (|analytic| + 1e-8)`.
//!
//! A central difference whose stencil straddles a ReLU or L1 kink estimates
//! neither one-sided derivative, so such coordinates are detected through the
//! tape's kink signature and replaced by fresh samples.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

pub mod suite;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per input tensor; tensors this small or smaller are checked exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            coords_per_tensor: 20,
            seed: 0x6772_6164,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checks: Vec<CoordCheck>,
    /// Probes per input discarded because `x +- eps` crossed a ReLU or L1 kink.
    pub skipped_at_kinks: Vec<usize>,
    pub input_lens: Vec<usize>,
    pub input_names: Vec<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }

    /// Number of distinct coordinates checked for input `i`.
    pub fn coords_for(&self, i: usize) -> usize {
        self.checks.iter().filter(|c| c.input == i).count()
    }

    /// True when input `i` got `want` checked coordinates, or every
    /// coordinate was probed if it has fewer.
    pub fn covered(&self, i: usize, want: usize) -> bool {
        let checked = self.coords_for(i);
        checked >= want || checked + self.skipped_at_kinks[i] == self.input_lens[i]
    }

    pub fn total_skipped(&self) -> usize {
        self.skipped_at_kinks.iter().sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Runs `build` on fresh tapes with every input as a trainable leaf.
pub fn check<F>(
    name: &str,
    inputs: &[(String, Tensor)],
    opts: &GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tensors: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();

    // probe once for the output shape, then fix the projection
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).clone()
    };
    let projection = Tensor::uniform(probe.shape(), -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let proj = tape.constant(projection.clone());
    let prod = tape.mul(out, proj)?;
    let root = tape.sum(prod);
    let grads = tape.backward(root)?;
    let base_signature = tape.kink_signature();

    let eval = |values: &[Tensor]| -> Result<(Tensor, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape.value(out).clone(), tape.kink_signature()))
    };
    // None when either probe crosses a ReLU or L1 kink
    let probe_coord = |i: usize, c: usize, analytic: f64| -> Result<Option<CoordCheck>> {
        let mut values = tensors.clone();
        let x0 = values[i].data()[c];
        values[i].data_mut()[c] = x0 + opts.eps;
        let (plus, sig_plus) = eval(&values)?;
        values[i].data_mut()[c] = x0 - opts.eps;
        let (minus, sig_minus) = eval(&values)?;
        if sig_plus != base_signature || sig_minus != base_signature {
            return Ok(None);
        }
        // differencing the outputs before projecting avoids cancelling two large sums
        let diff: f64 = plus
            .data()
            .iter()
            .zip(minus.data())
            .zip(projection.data())
            .map(|((p, m), w)| (p - m) * w)
            .sum();
        let numeric = diff / (2.0 * opts.eps);
        Ok(Some(CoordCheck {
            input: i,
            coord: c,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        }))
    };

    let mut checks = Vec::new();
    let mut skipped_at_kinks = vec![0; tensors.len()];
    for (i, t) in tensors.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        // candidates in random order; kinked coordinates are replaced by the next ones
        let order: Vec<usize> = sample(&mut rng, t.len(), t.len()).into_vec();
        let want = opts.coords_per_tensor.min(t.len());
        let mut kept = Vec::new();
        let mut next = 0;
        while kept.len() < want && next < order.len() {
            let batch = &order[next..(next + want - kept.len()).min(order.len())];
            next += batch.len();
            let probed = parallel::map_slice(batch, |&c| probe_coord(i, c, analytic.data()[c]));
            for r in probed {
                match r? {
                    Some(check) => kept.push(check),
                    None => skipped_at_kinks[i] += 1,
                }
            }
        }
        kept.sort_by_key(|c| c.coord);
        checks.extend(kept);
    }
    if checks.iter().any(|c| !c.numeric.is_finite() || !c.analytic.is_finite()) {
        return Err(Error::Numerical(format!("{name}: non-finite gradient during check")));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checks,
        skipped_at_kinks,
        input_lens: tensors.iter().map(Tensor::len).collect(),
        input_names: inputs.iter().map(|(n, _)| n.clone()).collect(),
    })
}

/// Uniform `[-1, 1)` tensor from a seeded generator.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}
