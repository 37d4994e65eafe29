//! Residual convolutional feature extractor.
//!
//! A 3×3 stride-2 stem followed by stages of plain residual blocks
//! (`relu(conv_b(relu(conv_a(x))) + shortcut(x))`). There are no
//! normalization layers.

use crate::error::{Error, Result};
use crate::params::{Conv, Init, Initializer, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub const STEM_STRIDE: usize = 2;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub stride_per_stage: Vec<usize>,
}

impl BackboneConfig {
    /// Stem 32, three stages of two blocks, widths 32/64/128, total stride 16.
    pub fn base() -> Self {
        BackboneConfig {
            stem_channels: 32,
            stage_widths: vec![32, 64, 128],
            blocks_per_stage: vec![2, 2, 2],
            stride_per_stage: vec![2, 2, 2],
        }
    }

    /// Stem 8, widths 8/16, one block each, total stride 8.
    pub fn small() -> Self {
        BackboneConfig {
            stem_channels: 8,
            stage_widths: vec![8, 16],
            blocks_per_stage: vec![1, 1],
            stride_per_stage: vec![2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.stage_widths.len();
        if k == 0 || self.blocks_per_stage.len() != k || self.stride_per_stage.len() != k {
            return Err(Error::Config(format!(
                "backbone needs equally long, non-empty stage lists (widths {}, blocks {}, strides {})",
                k,
                self.blocks_per_stage.len(),
                self.stride_per_stage.len()
            )));
        }
        if self.stem_channels == 0 || self.stage_widths.contains(&0) {
            return Err(Error::Config("backbone widths must be at least 1".into()));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        if let Some(s) = self.stride_per_stage.iter().find(|&&s| s != 1 && s != 2) {
            return Err(Error::Config(format!("stage stride must be 1 or 2, got {s}")));
        }
        Ok(())
    }

    /// Product of the stem and stage strides.
    pub fn total_stride(&self) -> usize {
        STEM_STRIDE * self.stride_per_stage.iter().product::<usize>()
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_widths.last().unwrap_or(&self.stem_channels)
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub projection: Option<Conv>,
}

impl ResidualBlock {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let a = self.conv_a.forward(tape, p, x)?;
        let a = tape.relu(a);
        let b = self.conv_b.forward(tape, p, a)?;
        let shortcut = match &self.projection {
            Some(proj) => proj.forward(tape, p, x)?,
            None => x,
        };
        let sum = tape.add(b, shortcut)?;
        Ok(tape.relu(sum))
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: Conv,
    pub blocks: Vec<ResidualBlock>,
}

/// Builds a standalone backbone with its own parameter store.
pub fn build_backbone(cfg: &BackboneConfig, seed: u64) -> Result<(Backbone, ParamStore)> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let bb = Backbone::register(cfg, &mut store, &mut init)?;
    Ok((bb, store))
}

impl Backbone {
    /// Registers all parameters under `backbone.*`.
    pub fn register(cfg: &BackboneConfig, store: &mut ParamStore, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv::new(
            store,
            init,
            "backbone.stem",
            3,
            INPUT_CHANNELS,
            cfg.stem_channels,
            STEM_STRIDE,
        )?;
        let mut blocks = Vec::new();
        let mut width = cfg.stem_channels;
        for (s, ((&out, &count), &stride)) in cfg
            .stage_widths
            .iter()
            .zip(&cfg.blocks_per_stage)
            .zip(&cfg.stride_per_stage)
            .enumerate()
        {
            for b in 0..count {
                let stride = if b == 0 { stride } else { 1 };
                let name = format!("backbone.stage{s}.block{b}");
                let conv_a = Conv::new(store, init, &format!("{name}.conv_a"), 3, width, out, stride)?;
                let conv_b =
                    Conv::with_init(store, init, Init::Lecun, &format!("{name}.conv_b"), 3, out, out, 1)?;
                let projection = (width != out || stride != 1)
                    .then(|| {
                        let name = format!("{name}.projection");
                        Conv::with_init(store, init, Init::Lecun, &name, 1, width, out, stride)
                    })
                    .transpose()?;
                blocks.push(ResidualBlock {
                    conv_a,
                    conv_b,
                    projection,
                });
                width = out;
            }
        }
        Ok(Backbone {
            config: cfg.clone(),
            stem,
            blocks,
        })
    }

    /// Maps `(n, H, W, 3)` images to `(n, H/s, W/s, C)` features.
    pub fn extract_features<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let s = tape.shape(x);
        let stride = self.config.total_stride();
        if s.c != INPUT_CHANNELS {
            return Err(Error::Config(format!(
                "backbone expects {INPUT_CHANNELS}-channel images, got {s}"
            )));
        }
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(stride) || !s.w.is_multiple_of(stride) {
            return Err(Error::InputSize {
                height: s.h,
                width: s.w,
                stride,
            });
        }
        let stem = self.stem.forward(tape, p, x)?;
        let mut h = tape.relu(stem);
        for block in &self.blocks {
            h = block.forward(tape, p, h)?;
        }
        Ok(h)
    }
}
