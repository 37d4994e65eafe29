//! Full network: backbone → TAFE → DCIF → logits.

use std::fmt;
use std::str::FromStr;

use crate::backbone::{Backbone, BackboneConfig};
use crate::dcif::{Dcif, DcifOutput, DEFAULT_REDUCTION};
use crate::error::{Error, Result};
use crate::params::{Initializer, ParamStore};
use crate::tafe::{Tafe, TafeOutput};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Number of basic expression categories.
pub const DEFAULT_CLASSES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Base,
    Small,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" | "tkfnet-base" => Ok(ModelKind::Base),
            "small" | "tkfnet-small" => Ok(ModelKind::Small),
            other => Err(Error::Config(format!("unknown model `{other}` (expected base or small)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Base => "base",
            ModelKind::Small => "small",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub classes: usize,
    pub reduction: usize,
}

impl ModelConfig {
    pub fn base(classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig::base(),
            classes,
            reduction: DEFAULT_REDUCTION,
        }
    }

    pub fn small(classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig::small(),
            classes,
            reduction: DEFAULT_REDUCTION,
        }
    }

    pub fn for_kind(kind: ModelKind, classes: usize) -> Self {
        match kind {
            ModelKind::Base => Self::base(classes),
            ModelKind::Small => Self::small(classes),
        }
    }

    /// Width of the TAFE output (twice the backbone width).
    pub fn fused_channels(&self) -> usize {
        2 * self.backbone.out_channels()
    }
}

#[derive(Clone, Debug)]
pub struct Tkfnet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub tafe: Tafe,
    pub dcif: Dcif,
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub features: Var,
    pub tafe: TafeOutput,
    pub dcif: DcifOutput,
    pub logits: Var,
}

/// Inference result for a batch.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Tensor<f32>,
    /// Attention gate, `(n, 1, 1, C)`.
    pub eta: Tensor<f32>,
}

impl Tkfnet {
    /// Builds the model and registers its parameters, initialized from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Tkfnet, ParamStore)> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let backbone = Backbone::register(&config.backbone, &mut store, &mut init)?;
        let tafe = Tafe::register(config.backbone.out_channels(), &mut store, &mut init)?;
        let dcif = Dcif::register(
            tafe.output_channels(),
            config.reduction,
            config.classes,
            &mut store,
            &mut init,
        )?;
        Ok((
            Tkfnet {
                config: config.clone(),
                backbone,
                tafe,
                dcif,
            },
            store,
        ))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], images: Var) -> Result<Forward> {
        let features = self.backbone.extract_features(tape, p, images)?;
        let tafe = self.tafe.forward(tape, p, features)?;
        let dcif = self.dcif.forward(tape, p, tafe.output)?;
        Ok(Forward {
            features,
            tafe,
            dcif,
            logits: dcif.logits,
        })
    }

    /// Gradient-free forward pass on a batch `(n, H, W, 3)`.
    pub fn predict(&self, store: &ParamStore, images: &Tensor<f32>) -> Result<Prediction> {
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, &p, x)?;
        Ok(Prediction {
            logits: tape.value(out.logits).clone(),
            eta: tape.value(out.dcif.gated.eta).clone(),
        })
    }
}

/// Row-wise softmax of `(n, 1, 1, q)` logits, in f64.
pub fn softmax_rows(logits: &Tensor<f32>) -> Vec<Vec<f64>> {
    let q = logits.shape().c;
    logits
        .data()
        .chunks(q.max(1))
        .map(|row| {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
