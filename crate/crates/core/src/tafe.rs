//! Texture-aware feature extractor.
//!
//! The backbone map φ is projected by two per-position affine branches.
//! Branch one is summarized by its per-channel spatial mean and variance,
//! fused as `alpha·mean + beta·var`, passed through GeLU and a 1×1 conv, and
//! used to rescale every channel of the branch. Branch two goes through a
//! 3×3 → 1×1 → GeLU → 1×1 cascade. The two results are concatenated, so the
//! output has twice the input width.

use crate::error::Result;
use crate::params::{Conv, Init, Initializer, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Shape, Tensor};

pub const ALPHA_INIT: f32 = 1.0;
pub const BETA_INIT: f32 = 0.1;

#[derive(Clone, Debug)]
pub struct Tafe {
    pub channels: usize,
    pub branch1: Conv,
    pub branch2: Conv,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub mod_conv: Conv,
    pub ctx_conv3: Conv,
    pub ctx_conv1a: Conv,
    pub ctx_conv1b: Conv,
}

/// Per-channel statistics of branch one.
#[derive(Clone, Copy, Debug)]
pub struct TextureDescriptor {
    /// Spatial mean, `(n, 1, 1, C)`.
    pub mean: Var,
    /// Population variance, `(n, 1, 1, C)`.
    pub variance: Var,
    /// `alpha·mean + beta·variance`.
    pub fused: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TafeOutput {
    pub o1: Var,
    pub o2: Var,
    pub descriptor: TextureDescriptor,
    /// Per-(sample, channel) factor applied to `o1`.
    pub modulation: Var,
    pub modulated: Var,
    pub context: Var,
    /// Concatenation of `modulated` and `context`, `(n, h, w, 2C)`.
    pub output: Var,
}

impl Tafe {
    /// Registers all parameters under `tafe.*`.
    pub fn register(channels: usize, store: &mut ParamStore, init: &mut Initializer) -> Result<Self> {
        use Init::Lecun;
        let c = channels;
        Ok(Tafe {
            channels,
            branch1: Conv::with_init(store, init, Lecun, "tafe.branch1", 1, c, c, 1)?,
            branch2: Conv::with_init(store, init, Lecun, "tafe.branch2", 1, c, c, 1)?,
            alpha: store.add("tafe.alpha", Tensor::scalar(ALPHA_INIT))?,
            beta: store.add("tafe.beta", Tensor::scalar(BETA_INIT))?,
            mod_conv: Conv::with_init(store, init, Lecun, "tafe.mod_conv", 1, c, c, 1)?,
            ctx_conv3: Conv::with_init(store, init, Lecun, "tafe.ctx_conv3", 3, c, c, 1)?,
            ctx_conv1a: Conv::new(store, init, "tafe.ctx_conv1a", 1, c, c, 1)?,
            ctx_conv1b: Conv::with_init(store, init, Lecun, "tafe.ctx_conv1b", 1, c, c, 1)?,
        })
    }

    pub fn output_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn branch_project<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], phi: Var) -> Result<(Var, Var)> {
        let o1 = self.branch1.forward(tape, p, phi)?;
        let o2 = self.branch2.forward(tape, p, phi)?;
        Ok((o1, o2))
    }

    pub fn texture_descriptor<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        o1: Var,
    ) -> Result<TextureDescriptor> {
        let (mean, variance) = tape.spatial_moments(o1)?;
        let a = tape.scale(mean, p[self.alpha.index()])?;
        let b = tape.scale(variance, p[self.beta.index()])?;
        let fused = tape.add(a, b)?;
        Ok(TextureDescriptor {
            mean,
            variance,
            fused,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], phi: Var) -> Result<TafeOutput> {
        let (o1, o2) = self.branch_project(tape, p, phi)?;
        let descriptor = self.texture_descriptor(tape, p, o1)?;
        let activated = tape.gelu(descriptor.fused);
        let modulation = self.mod_conv.forward(tape, p, activated)?;
        let modulated = tape.hadamard(o1, modulation)?;

        let c = self.ctx_conv3.forward(tape, p, o2)?;
        let c = self.ctx_conv1a.forward(tape, p, c)?;
        let c = tape.gelu(c);
        let context = self.ctx_conv1b.forward(tape, p, c)?;

        let output = tape.concat_channels(modulated, context)?;
        Ok(TafeOutput {
            o1,
            o2,
            descriptor,
            modulation,
            modulated,
            context,
            output,
        })
    }

    /// Output shape for an input of shape `s`.
    pub fn output_shape(&self, s: Shape) -> Shape {
        s.with_c(self.output_channels())
    }
}
