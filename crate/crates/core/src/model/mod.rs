//! The two-branch multi-contrast super-resolution network.
//!
//! The T1 branch runs on the high-resolution auxiliary image; the T2 branch
//! starts from the sub-pixel-upsampled low-resolution target and, at every
//! stage, consumes the previous T1 and T2 features through a 1x1 fusion
//! convolution. All stage features feed the multi-stage integration module,
//! and the final-stage features of both branches pass through channel-spatial
//! attention before reconstruction.

mod checkpoint;
mod config;
pub mod graph;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{MINetConfig, Variant};
pub use graph::{
    backbone_forward, channel_spatial_attention, minet_forward, minet_loss, multi_stage_integration,
    reconstruct, residual_group, shallow_extract, AttentionTrace, ForwardTrace, IntegrationTrace,
    ModelOutputs, ParamVars, StageFeatures,
};
pub use params::{group_prefix, MINetParams};

use crate::autodiff::Tape;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of training triplets, each `[B,1,side,side]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_t1: Tensor,
    pub y_t2: Tensor,
    pub x_t2: Tensor,
}

/// Architecture plus ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct MINet {
    pub config: MINetConfig,
    pub variant: Variant,
}

/// Loss value and per-parameter gradients from one forward/backward step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub loss: f64,
    pub grads: Vec<(String, Tensor)>,
}

impl MINet {
    pub fn new(config: MINetConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, variant })
    }

    pub fn init_params(&self, seed: u64) -> Result<MINetParams> {
        MINetParams::init(&self.config, self.variant, seed)
    }

    /// Loss weights actually used: `no_aux` drops the T1 term.
    pub fn loss_weights(&self) -> (f64, f64) {
        let beta = if self.variant.uses_aux() { self.config.beta } else { 0.0 };
        (self.config.alpha, beta)
    }

    /// Forward only; returns `(x̂_T2, x̂_T1)`.
    pub fn predict(&self, params: &MINetParams, x_t1: &Tensor, y_t2: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let pv = ParamVars::load(&mut tape, params, false);
        let x = tape.constant(x_t1.clone());
        let y = tape.constant(y_t2.clone());
        let trace = minet_forward(&mut tape, &pv, x, y, &self.config, self.variant)?;
        let sr = tape.value(trace.outputs.sr_t2).clone();
        let t1 = trace.outputs.rec_t1.map(|v| tape.value(v).clone());
        Ok((sr, t1))
    }

    /// One forward/backward pass on a fresh tape.
    pub fn step(&self, params: &MINetParams, batch: &Batch) -> Result<StepResult> {
        let mut tape = Tape::new();
        let pv = ParamVars::load(&mut tape, params, true);
        let x_t1 = tape.constant(batch.x_t1.clone());
        let y_t2 = tape.constant(batch.y_t2.clone());
        let x_t2 = tape.constant(batch.x_t2.clone());
        let trace = minet_forward(&mut tape, &pv, x_t1, y_t2, &self.config, self.variant)?;
        let (alpha, beta) = self.loss_weights();
        let loss = minet_loss(&mut tape, &trace.outputs, x_t2, x_t1, alpha, beta)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value}")));
        }
        let mut grads = tape.backward(loss)?;
        let grads = params
            .iter()
            .map(|(name, t)| {
                let var = pv.get(name)?;
                Ok((
                    name.to_string(),
                    grads.take(var).unwrap_or_else(|| Tensor::zeros(t.shape())),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StepResult { loss: value, grads })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.config.write_kv(&mut kv);
        kv.set("variant", self.variant);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let variant = kv.get_or("variant", Variant::Full)?;
        Self::new(MINetConfig::from_kv(kv)?, variant)
    }
}
