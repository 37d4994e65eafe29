//! Procedural texture classes for desk-scale experiments.
//!
//! Class `k` is a sinusoidal grating oriented at `k·π/7`, with a random phase,
//! jittered amplitude and additive Gaussian noise per sample.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, Sample};
use crate::tensor::{Shape, Tensor};

/// Number of built-in orientation families.
pub const MAX_SYNTH_CLASSES: usize = 7;
pub const DEFAULT_NOISE: f32 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f32,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            per_class,
            height: size,
            width: size,
            seed,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = 0.0;
        self
    }
}

/// Grating orientation of class `k`, in radians.
pub fn class_angle(k: usize) -> f64 {
    k as f64 * PI / MAX_SYNTH_CLASSES as f64
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset, DataError> {
    if spec.per_class == 0 {
        return Err(DataError::Invalid("per_class must be at least 1".into()));
    }
    if spec.classes == 0 || spec.classes > MAX_SYNTH_CLASSES {
        return Err(DataError::Invalid(format!(
            "synthetic classes must be in 1..={MAX_SYNTH_CLASSES}, got {}",
            spec.classes
        )));
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(DataError::Invalid("synthetic image size must be non-zero".into()));
    }
    if spec.noise.is_nan() || spec.noise < 0.0 {
        return Err(DataError::Invalid(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise as f64).expect("non-negative std");
    let wavelength = spec.height.min(spec.width).max(4) as f64 / 4.0;
    let shape = Shape::new(1, spec.height, spec.width, 3);

    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for k in 0..spec.classes {
        let (sin, cos) = class_angle(k).sin_cos();
        for _ in 0..spec.per_class {
            let phase = rng.random_range(0.0..2.0 * PI);
            let amplitude = rng.random_range(0.8..1.0);
            let mut data = Vec::with_capacity(shape.numel());
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let t = (x as f64 * cos + y as f64 * sin) * 2.0 * PI / wavelength;
                    let base = 0.5 + 0.4 * amplitude * (t + phase).sin();
                    for _ in 0..3 {
                        let v = if spec.noise > 0.0 {
                            base + noise.sample(&mut rng)
                        } else {
                            base
                        };
                        data.push(v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            samples.push(Sample {
                image: Tensor::new(shape, data).expect("sized above"),
                label: k,
                source_path: None,
            });
        }
    }
    Ok(Dataset {
        samples,
        class_names: (0..spec.classes).map(|k| format!("orient{k}")).collect(),
    })
}
