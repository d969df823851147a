//! The network graph, recorded on a [`Tape`].

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

use super::config::{MINetConfig, Variant};
use super::params::{group_prefix, MINetParams};

/// Parameters placed on a tape, looked up by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Puts every parameter on the tape; `trainable` controls whether they
    /// receive gradients.
    pub fn load(tape: &mut Tape, params: &MINetParams, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone(), trainable)))
            .collect();
        Self { vars }
    }

    /// Wraps variables that are already on a tape.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} is not on the tape")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    fn conv(&self, name: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{name}.w"))?, self.get(&format!("{name}.b"))?))
    }
}

fn conv_named(tape: &mut Tape, pv: &ParamVars, name: &str, x: Var, padding: usize) -> Result<Var> {
    let (w, b) = pv.conv(name)?;
    tape.conv2d(x, w, b, 1, padding)
}

/// Shallow features: `conv(x_t1)` and `shuffle(conv(conv(y_t2)), r)`, both `[B,C,rN,rN]`.
pub fn shallow_extract(
    tape: &mut Tape,
    pv: &ParamVars,
    x_t1: Var,
    y_t2: Var,
    cfg: &MINetConfig,
) -> Result<(Var, Var)> {
    let xs = tape.shape(x_t1).to_vec();
    let ys = tape.shape(y_t2).to_vec();
    let ok = xs.len() == 4
        && ys.len() == 4
        && xs[0] == ys[0]
        && xs[1] == 1
        && ys[1] == 1
        && xs[2] == ys[2] * cfg.scale
        && xs[3] == ys[3] * cfg.scale;
    if !ok {
        return Err(Error::Input(format!(
            "expected HR T1 [B,1,rN,rN] and LR T2 [B,1,N,N] with r = {}, got {xs:?} and {ys:?}",
            cfg.scale
        )));
    }
    let f0_t1 = conv_named(tape, pv, "shallow_t1", x_t1, 1)?;
    let lr_feat = conv_named(tape, pv, "shallow_t2", y_t2, 1)?;
    let pre = conv_named(tape, pv, "upsample", lr_feat, 1)?;
    let f0_t2 = tape.pixel_shuffle(pre, cfg.scale)?;
    Ok((f0_t1, f0_t2))
}

/// Residual channel-attention block: `x + CA(conv2(relu(conv1(x))))`.
fn rcab(tape: &mut Tape, pv: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let h = conv_named(tape, pv, &format!("{prefix}.conv1"), x, 1)?;
    let h = tape.relu(h);
    let h = conv_named(tape, pv, &format!("{prefix}.conv2"), h, 1)?;
    let pooled = tape.global_avg_pool(h)?;
    let s = conv_named(tape, pv, &format!("{prefix}.ca_down"), pooled, 0)?;
    let s = tape.relu(s);
    let s = conv_named(tape, pv, &format!("{prefix}.ca_up"), s, 0)?;
    let s = tape.sigmoid(s);
    let h = tape.scale_channels(h, s)?;
    tape.add(x, h)
}

/// `x + tail(blocks(x))`; shape-preserving.
pub fn residual_group(tape: &mut Tape, pv: &ParamVars, prefix: &str, blocks: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for k in 0..blocks {
        h = rcab(tape, pv, &format!("{prefix}.block{k}"), h)?;
    }
    let h = conv_named(tape, pv, &format!("{prefix}.tail"), h, 1)?;
    tape.add(x, h)
}

/// Shallow features, per-stage features of both branches, and their
/// channel-axis concatenation `[F_T1^1, F_T2^1, ..., F_T1^L, F_T2^L]`
/// with shape `[B, 2L*C, H, W]` (logically `[B, 2L, C, H, W]`).
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub f0_t1: Var,
    pub f0_t2: Var,
    pub stages: Vec<(Var, Var)>,
    pub concatenated: Var,
}

pub fn backbone_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    f0_t1: Var,
    f0_t2: Var,
    cfg: &MINetConfig,
) -> Result<StageFeatures> {
    let mut prev = (f0_t1, f0_t2);
    let mut stages = Vec::with_capacity(cfg.groups);
    for stage in 1..=cfg.groups {
        let t1 = residual_group(tape, pv, &group_prefix("t1", stage), cfg.blocks, prev.0)?;
        let fused = tape.concat(&[prev.0, prev.1], 1)?;
        let fused = conv_named(tape, pv, &format!("fuse.{stage}"), fused, 0)?;
        let t2 = residual_group(tape, pv, &group_prefix("t2", stage), cfg.blocks, fused)?;
        stages.push((t1, t2));
        prev = (t1, t2);
    }
    let flat: Vec<Var> = stages.iter().flat_map(|&(a, b)| [a, b]).collect();
    let concatenated = tape.concat(&flat, 1)?;
    Ok(StageFeatures { f0_t1, f0_t2, stages, concatenated })
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrationTrace {
    /// Row-softmaxed affinity `[B, 2L, 2L]`.
    pub affinity: Var,
    /// `gamma * RF + F`, `[B, 2L*C, H, W]`, before the reducer.
    pub enriched: Var,
    /// Reduced output `H`, `[B, C, H, W]`.
    pub output: Var,
}

/// Affinity-weighted enrichment of the stacked stage features, reduced to
/// `C` channels by a 1x1 convolution.
pub fn multi_stage_integration(
    tape: &mut Tape,
    features: Var,
    stage_count: usize,
    gamma: Var,
    reduce_w: Var,
    reduce_b: Var,
) -> Result<IntegrationTrace> {
    let shape = tape.shape(features).to_vec();
    let &[b, total_c, h, w] = shape.as_slice() else {
        return Err(Error::shape("multi_stage_integration", format!("expected rank 4, got {shape:?}")));
    };
    if stage_count == 0 || total_c % stage_count != 0 {
        return Err(Error::shape(
            "multi_stage_integration",
            format!("{total_c} channels cannot hold {stage_count} stage features"),
        ));
    }
    let per = total_c / stage_count * h * w;
    let flat = tape.reshape(features, &[b, stage_count, per])?;
    let flat_t = tape.transpose(flat, &[0, 2, 1])?;
    let scores = tape.matmul(flat, flat_t)?;
    let affinity = tape.softmax_rows(scores)?;
    let summaries = tape.matmul(affinity, flat)?;
    let gated = tape.scale_by(summaries, gamma)?;
    let enriched = tape.add(gated, flat)?;
    let enriched = tape.reshape(enriched, &shape)?;
    let output = tape.conv2d(enriched, reduce_w, reduce_b, 1, 0)?;
    Ok(IntegrationTrace { affinity, enriched, output })
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionTrace {
    /// Pre-sigmoid attention map, same shape as the input.
    pub map: Var,
    pub output: Var,
}

/// `lambda * sigmoid(conv3d(F)) * F + F` with the 3-D convolution running
/// jointly over channels and space.
pub fn channel_spatial_attention(
    tape: &mut Tape,
    features: Var,
    lambda: Var,
    weight: Var,
    bias: Var,
) -> Result<AttentionTrace> {
    let shape = tape.shape(features).to_vec();
    let &[b, c, h, w] = shape.as_slice() else {
        return Err(Error::shape("channel_spatial_attention", format!("expected rank 4, got {shape:?}")));
    };
    let volume = tape.reshape(features, &[b, 1, c, h, w])?;
    let kernel = tape.shape(weight).to_vec();
    let pad = [kernel[2] / 2, kernel[3] / 2, kernel[4] / 2];
    let map = tape.conv3d(volume, weight, bias, pad)?;
    let map = tape.reshape(map, &shape)?;
    let gate = tape.sigmoid(map);
    let attended = tape.mul(gate, features)?;
    let attended = tape.scale_by(attended, lambda)?;
    let output = tape.add(attended, features)?;
    Ok(AttentionTrace { map, output })
}

/// `x̂_T2 = rec_t2(sum of summands)`; `x̂_T1 = rec_t1(g_t1)` when present.
pub fn reconstruct(
    tape: &mut Tape,
    pv: &ParamVars,
    summands: &[Var],
    g_t1: Option<Var>,
) -> Result<ModelOutputs> {
    let (&first, rest) = summands
        .split_first()
        .ok_or_else(|| Error::Input("reconstruction needs at least one summand".into()))?;
    let mut acc = first;
    for &s in rest {
        acc = tape.add(acc, s)?;
    }
    let sr_t2 = conv_named(tape, pv, "rec_t2", acc, 1)?;
    let rec_t1 = g_t1.map(|g| conv_named(tape, pv, "rec_t1", g, 1)).transpose()?;
    Ok(ModelOutputs { sr_t2, rec_t1 })
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    /// Super-resolved T2, `[B,1,rN,rN]`.
    pub sr_t2: Var,
    /// Auxiliary T1 reconstruction, absent for the `no_aux` variant.
    pub rec_t1: Option<Var>,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub features: StageFeatures,
    pub integration: Option<IntegrationTrace>,
    pub g_t1: Option<Var>,
    pub g_t2: Var,
    pub outputs: ModelOutputs,
}

pub fn minet_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    x_t1: Var,
    y_t2: Var,
    cfg: &MINetConfig,
    variant: Variant,
) -> Result<ForwardTrace> {
    let x_t1 = if variant.uses_aux() {
        x_t1
    } else {
        let zeros = crate::Tensor::zeros(tape.shape(x_t1));
        tape.constant(zeros)
    };
    let (f0_t1, f0_t2) = shallow_extract(tape, pv, x_t1, y_t2, cfg)?;
    let features = backbone_forward(tape, pv, f0_t1, f0_t2, cfg)?;
    let &(last_t1, last_t2) = features.stages.last().expect("at least one stage");

    let integration = if variant.uses_integration() {
        Some(multi_stage_integration(
            tape,
            features.concatenated,
            2 * cfg.groups,
            pv.get("int.gamma")?,
            pv.get("int.reduce.w")?,
            pv.get("int.reduce.b")?,
        )?)
    } else {
        None
    };

    let attend = |tape: &mut Tape, branch: &str, f: Var| -> Result<Var> {
        if variant.uses_attention() {
            let (w, b) = pv.conv(&format!("att_{branch}"))?;
            let lambda = pv.get(&format!("att_{branch}.lambda"))?;
            Ok(channel_spatial_attention(tape, f, lambda, w, b)?.output)
        } else {
            Ok(f)
        }
    };
    let g_t2 = attend(tape, "t2", last_t2)?;
    let g_t1 = if variant.uses_aux() { Some(attend(tape, "t1", last_t1)?) } else { None };

    let mut summands = vec![features.f0_t2, g_t2];
    if let Some(int) = &integration {
        summands.push(int.output);
    }
    let outputs = reconstruct(tape, pv, &summands, g_t1)?;
    Ok(ForwardTrace { features, integration, g_t1, g_t2, outputs })
}

/// `alpha * L1(x̂_T2, x_T2) + beta * L1(x̂_T1, x_T1)`, each term a mean over
/// batch and pixels. The T1 term is omitted when there is no T1 head.
pub fn minet_loss(
    tape: &mut Tape,
    outputs: &ModelOutputs,
    x_t2: Var,
    x_t1: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let t2 = tape.l1_loss(outputs.sr_t2, x_t2)?;
    let t2 = tape.scale(t2, alpha);
    match outputs.rec_t1 {
        Some(rec) => {
            let t1 = tape.l1_loss(rec, x_t1)?;
            let t1 = tape.scale(t1, beta);
            tape.add(t2, t1)
        }
        None => Ok(t2),
    }
}
