//! Named gradient checks over every tape op and every network module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{
    channel_spatial_attention, minet_forward, multi_stage_integration, residual_group, MINetConfig,
    MINetParams, ParamVars, Variant,
};
use crate::tensor::Tensor;

use super::{check, random_tensor, GradCheckOptions, GradCheckReport, MODEL_TOLERANCE, OP_TOLERANCE};

/// One finished check with the tolerance it is held to.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

pub const OP_NAMES: &[&str] = &[
    "conv2d_same",
    "conv2d_strided",
    "conv2d_1x1",
    "conv3d",
    "matmul",
    "matmul_batched",
    "softmax_rows",
    "pixel_shuffle",
    "add_sub_mul",
    "scale",
    "scale_by",
    "scale_channels",
    "sigmoid",
    "relu",
    "concat",
    "reshape_transpose",
    "global_avg_pool",
    "l1_loss",
];

pub const MODULE_NAMES: &[&str] = &["residual_group", "integration", "attention", "model"];

/// Shape of the full-model check: three stages of eight channels on a 16x16 output.
pub fn model_check_config() -> MINetConfig {
    MINetConfig { groups: 3, channels: 8, blocks: 2, scale: 2, ..MINetConfig::default() }
}

/// Moves values away from zero so kinks (ReLU, |x|) stay outside the
/// finite-difference stencil.
fn off_zero(t: Tensor) -> Tensor {
    t.map(|v| v.signum() * (0.1 + v.abs()))
}

fn named(pairs: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn run_op(name: &str, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut r = |shape: &[usize]| random_tensor(shape, rng);
    match name {
        "conv2d_same" => {
            // 18 columns exercise both the vector blocks and the scalar tail
            let inputs = named(vec![("x", r(&[2, 3, 5, 18])), ("w", r(&[4, 3, 3, 3])), ("b", r(&[4]))]);
            check(name, &inputs, opts, |t, v| t.conv2d(v[0], v[1], v[2], 1, 1))
        }
        "conv2d_strided" => {
            let inputs = named(vec![("x", r(&[2, 2, 7, 6])), ("w", r(&[3, 2, 3, 3])), ("b", r(&[3]))]);
            check(name, &inputs, opts, |t, v| t.conv2d(v[0], v[1], v[2], 2, 1))
        }
        "conv2d_1x1" => {
            let inputs = named(vec![("x", r(&[2, 6, 4, 9])), ("w", r(&[3, 6, 1, 1])), ("b", r(&[3]))]);
            check(name, &inputs, opts, |t, v| t.conv2d(v[0], v[1], v[2], 1, 0))
        }
        "conv3d" => {
            let inputs = named(vec![("x", r(&[2, 1, 4, 5, 6])), ("w", r(&[1, 1, 3, 3, 3])), ("b", r(&[1]))]);
            check(name, &inputs, opts, |t, v| t.conv3d(v[0], v[1], v[2], [1, 1, 1]))
        }
        "matmul" => {
            let inputs = named(vec![("a", r(&[4, 5])), ("b", r(&[5, 3]))]);
            check(name, &inputs, opts, |t, v| t.matmul(v[0], v[1]))
        }
        "matmul_batched" => {
            let inputs = named(vec![("a", r(&[2, 3, 7])), ("b", r(&[2, 7, 4]))]);
            check(name, &inputs, opts, |t, v| t.matmul(v[0], v[1]))
        }
        "softmax_rows" => {
            let inputs = named(vec![("x", r(&[2, 3, 5]).map(|v| 3.0 * v))]);
            check(name, &inputs, opts, |t, v| t.softmax_rows(v[0]))
        }
        "pixel_shuffle" => {
            let inputs = named(vec![("x", r(&[2, 8, 3, 2]))]);
            check(name, &inputs, opts, |t, v| t.pixel_shuffle(v[0], 2))
        }
        "add_sub_mul" => {
            let inputs = named(vec![("a", r(&[3, 4])), ("b", r(&[3, 4])), ("c", r(&[3, 4]))]);
            check(name, &inputs, opts, |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[2])?;
                t.mul(d, v[1])
            })
        }
        "scale" => {
            let inputs = named(vec![("x", r(&[5, 3]))]);
            check(name, &inputs, opts, |t, v| Ok(t.scale(v[0], -1.7)))
        }
        "scale_by" => {
            let inputs = named(vec![("x", r(&[4, 6])), ("s", r(&[1]))]);
            check(name, &inputs, opts, |t, v| t.scale_by(v[0], v[1]))
        }
        "scale_channels" => {
            let inputs = named(vec![("x", r(&[2, 3, 4, 5])), ("s", r(&[2, 3, 1, 1]))]);
            check(name, &inputs, opts, |t, v| t.scale_channels(v[0], v[1]))
        }
        "sigmoid" => {
            let inputs = named(vec![("x", r(&[4, 7]).map(|v| 4.0 * v))]);
            check(name, &inputs, opts, |t, v| Ok(t.sigmoid(v[0])))
        }
        "relu" => {
            let inputs = named(vec![("x", off_zero(r(&[5, 6])))]);
            check(name, &inputs, opts, |t, v| Ok(t.relu(v[0])))
        }
        "concat" => {
            let inputs = named(vec![("a", r(&[2, 1, 3, 3])), ("b", r(&[2, 3, 3, 3]))]);
            check(name, &inputs, opts, |t, v| t.concat(&[v[0], v[1]], 1))
        }
        "reshape_transpose" => {
            let inputs = named(vec![("x", r(&[2, 3, 4]))]);
            check(name, &inputs, opts, |t, v| {
                let y = t.transpose(v[0], &[2, 0, 1])?;
                t.reshape(y, &[8, 3])
            })
        }
        "global_avg_pool" => {
            let inputs = named(vec![("x", r(&[2, 3, 4, 5]))]);
            check(name, &inputs, opts, |t, v| t.global_avg_pool(v[0]))
        }
        "l1_loss" => {
            let target = r(&[3, 5]);
            let pred = target.zip_map(&off_zero(r(&[3, 5])), |a, d| a + d)?;
            let inputs = named(vec![("pred", pred), ("target", target)]);
            check(name, &inputs, opts, |t, v| t.l1_loss(v[0], v[1]))
        }
        _ => Err(Error::Usage(format!("unknown gradient check {name:?}"))),
    }
}

/// Conv parameters for one residual group, in a deterministic order.
fn group_params(prefix: &str, channels: usize, reduced: usize, blocks: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    let mut conv = |name: String, o: usize, i: usize, k: usize, rng: &mut ChaCha8Rng| {
        let scale = 1.0 / ((i * k * k) as f64).sqrt();
        out.push((format!("{name}.w"), random_tensor(&[o, i, k, k], rng).map(|v| v * scale)));
        out.push((format!("{name}.b"), random_tensor(&[o], rng).map(|v| 0.1 * v)));
    };
    for k in 0..blocks {
        let b = format!("{prefix}.block{k}");
        conv(format!("{b}.conv1"), channels, channels, 3, rng);
        conv(format!("{b}.conv2"), channels, channels, 3, rng);
        conv(format!("{b}.ca_down"), reduced, channels, 1, rng);
        conv(format!("{b}.ca_up"), channels, reduced, 1, rng);
    }
    conv(format!("{prefix}.tail"), channels, channels, 3, rng);
    out
}

fn param_vars(inputs: &[(String, Tensor)], vars: &[Var]) -> ParamVars {
    ParamVars::from_vars(inputs.iter().zip(vars).map(|((n, _), v)| (n.clone(), *v)))
}

fn run_module(name: &str, opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    match name {
        "residual_group" => {
            let mut inputs = vec![("x".to_string(), random_tensor(&[2, 4, 6, 9], rng))];
            inputs.extend(group_params("rg", 4, 2, 2, rng));
            let names = inputs.clone();
            check(name, &inputs, opts, move |t, v| {
                let pv = param_vars(&names, v);
                residual_group(t, &pv, "rg", 2, v[0])
            })
        }
        "integration" => {
            // two stages, two channels each: 2L = 4 feature maps
            let inputs = named(vec![
                ("features", random_tensor(&[2, 8, 3, 4], rng)),
                ("gamma", Tensor::new(vec![1], vec![0.6])?),
                ("reduce.w", random_tensor(&[2, 8, 1, 1], rng)),
                ("reduce.b", random_tensor(&[2], rng)),
            ]);
            check(name, &inputs, opts, |t, v| {
                Ok(multi_stage_integration(t, v[0], 4, v[1], v[2], v[3])?.output)
            })
        }
        "attention" => {
            let inputs = named(vec![
                ("features", random_tensor(&[2, 3, 4, 5], rng)),
                ("lambda", Tensor::new(vec![1], vec![0.8])?),
                ("w", random_tensor(&[1, 1, 3, 3, 3], rng)),
                ("b", random_tensor(&[1], rng)),
            ]);
            check(name, &inputs, opts, |t, v| Ok(channel_spatial_attention(t, v[0], v[1], v[2], v[3])?.output))
        }
        "model" => {
            let cfg = model_check_config();
            let mut params = MINetParams::init(&cfg, Variant::Full, opts.seed)?;
            // open the zero-initialised gates and reducer so every path carries gradient
            for (pname, t) in params.iter_mut() {
                if pname == "int.gamma" || pname.ends_with(".lambda") {
                    t.data_mut().fill(0.5);
                } else if pname.starts_with("int.reduce") {
                    *t = random_tensor(t.shape(), rng).map(|v| 0.2 * v);
                }
            }
            let side = 16;
            let x_t1 = Tensor::uniform(&[1, 1, side, side], 0.0, 1.0, rng);
            let y_t2 = Tensor::uniform(&[1, 1, side / cfg.scale, side / cfg.scale], 0.0, 1.0, rng);
            let inputs: Vec<(String, Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
            let names = inputs.clone();
            check(name, &inputs, opts, move |t, v| {
                let pv = param_vars(&names, v);
                let x = t.constant(x_t1.clone());
                let y = t.constant(y_t2.clone());
                let trace = minet_forward(t, &pv, x, y, &cfg, Variant::Full)?;
                let rec_t1 = trace.outputs.rec_t1.expect("full variant has a T1 head");
                t.concat(&[trace.outputs.sr_t2, rec_t1], 1)
            })
        }
        _ => Err(Error::Usage(format!("unknown gradient check {name:?}"))),
    }
}

/// Runs one named check; `name` is an op from [`OP_NAMES`] or a module from [`MODULE_NAMES`].
pub fn run_one(name: &str, opts: &GradCheckOptions) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)));
    if OP_NAMES.contains(&name) {
        Ok(SuiteEntry { report: run_op(name, opts, &mut rng)?, tolerance: OP_TOLERANCE })
    } else if MODULE_NAMES.contains(&name) {
        let tolerance = if name == "model" { MODEL_TOLERANCE } else { OP_TOLERANCE };
        Ok(SuiteEntry { report: run_module(name, opts, &mut rng)?, tolerance })
    } else {
        Err(Error::Usage(format!(
            "unknown gradient check {name:?}; expected one of: ops, modules, all, {}, {}",
            OP_NAMES.join(", "),
            MODULE_NAMES.join(", ")
        )))
    }
}

/// `"ops"`, `"modules"`, `"all"` or a single check name.
pub fn run_selection(selection: &str, opts: &GradCheckOptions) -> Result<Vec<SuiteEntry>> {
    let names: Vec<&str> = match selection {
        "ops" => OP_NAMES.to_vec(),
        "modules" => MODULE_NAMES.to_vec(),
        "all" => OP_NAMES.iter().chain(MODULE_NAMES).copied().collect(),
        one => vec![one],
    };
    names.into_iter().map(|n| run_one(n, opts)).collect()
}
