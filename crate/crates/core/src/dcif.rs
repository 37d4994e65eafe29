//! Dual contextual information filtering and the classification head.
//!
//! Global average and max pools of the TAFE output are concatenated and
//! turned into a per-channel sigmoid gate. The gated map is average-pooled
//! again, passed through a two-layer bottleneck, and classified by a single
//! fully connected layer.

use crate::error::{Error, Result};
use crate::ops::PoolKind;
use crate::params::{Conv, Dense, Init, Initializer, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub const DEFAULT_REDUCTION: usize = 4;

#[derive(Clone, Debug)]
pub struct Dcif {
    /// Width of the gated feature map.
    pub channels: usize,
    pub reduction: usize,
    pub classes: usize,
    /// 1×1 conv over the pooled `(n, 1, 1, 2C)` descriptor.
    pub attn_conv: Conv,
    pub fc1: Dense,
    pub fc2: Dense,
    pub head: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct GatedFeatures {
    pub avg: Var,
    pub max: Var,
    /// Sigmoid gate, `(n, 1, 1, C)`, every element in `(0, 1)`.
    pub eta: Var,
    pub theta: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DcifOutput {
    pub gated: GatedFeatures,
    pub context: Var,
    pub logits: Var,
}

impl Dcif {
    /// Registers all parameters under `dcif.*`.
    pub fn register(
        channels: usize,
        reduction: usize,
        classes: usize,
        store: &mut ParamStore,
        init: &mut Initializer,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel width {channels} is not divisible by reduction {reduction}"
            )));
        }
        if classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        let hidden = channels / reduction;
        Ok(Dcif {
            channels,
            reduction,
            classes,
            attn_conv: Conv::with_init(store, init, Init::Lecun, "dcif.attn_conv", 1, 2 * channels, channels, 1)?,
            fc1: Dense::new(store, init, "dcif.fc1", channels, hidden)?,
            fc2: Dense::with_init(store, init, Init::Lecun, "dcif.fc2", hidden, channels)?,
            head: Dense::with_init(store, init, Init::Lecun, "dcif.head", channels, classes)?,
        })
    }

    pub fn dual_pool_attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        v: Var,
    ) -> Result<GatedFeatures> {
        let avg = tape.adaptive_pool(PoolKind::Avg, v, (1, 1))?;
        let max = tape.adaptive_pool(PoolKind::Max, v, (1, 1))?;
        let pooled = tape.concat_channels(avg, max)?;
        let logits = self.attn_conv.forward(tape, p, pooled)?;
        let eta = tape.sigmoid(logits);
        let theta = tape.hadamard(v, eta)?;
        Ok(GatedFeatures {
            avg,
            max,
            eta,
            theta,
        })
    }

    pub fn global_context_encode<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], theta: Var) -> Result<Var> {
        let kappa = tape.adaptive_pool(PoolKind::Avg, theta, (1, 1))?;
        let h = self.fc1.forward(tape, p, kappa)?;
        let h = tape.relu(h);
        Ok(self.fc2.forward(tape, p, h)?)
    }

    /// `context` is already one vector per sample, so pooling and
    /// flattening before the head are identities.
    pub fn classify_head<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], context: Var) -> Result<Var> {
        Ok(self.head.forward(tape, p, context)?)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], v: Var) -> Result<DcifOutput> {
        let gated = self.dual_pool_attention(tape, p, v)?;
        let context = self.global_context_encode(tape, p, gated.theta)?;
        let logits = self.classify_head(tape, p, context)?;
        Ok(DcifOutput {
            gated,
            context,
            logits,
        })
    }
}
