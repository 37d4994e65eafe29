//! Cross-entropy training with momentum and polynomial learning-rate decay,
//! plus evaluation metrics.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, Tkfnet};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor, TensorError};

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// `lr(t) = end + (init - end) · (1 - min(t, total) / total)^power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub lr_end: f64,
    pub total_steps: u64,
    pub power: f64,
}

impl LrSchedule {
    pub fn new(lr_init: f64, lr_end: f64, total_steps: u64, power: f64) -> Result<Self> {
        let s = LrSchedule {
            lr_init,
            lr_end,
            total_steps,
            power,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("learning-rate schedule needs total_steps >= 1".into()));
        }
        if !(self.lr_init.is_finite() && self.lr_end.is_finite() && self.power.is_finite()) {
            return Err(Error::Config("learning-rate schedule values must be finite".into()));
        }
        if self.lr_end > self.lr_init || self.power < 0.0 {
            return Err(Error::Config(format!(
                "schedule must not increase (lr {} -> {}, power {})",
                self.lr_init, self.lr_end, self.power
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, t: u64) -> Result<f64> {
        self.validate()?;
        let frac = 1.0 - t.min(self.total_steps) as f64 / self.total_steps as f64;
        Ok(self.lr_end + (self.lr_init - self.lr_end) * frac.powf(self.power))
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor<f32>>,
    pub momentum: f64,
    pub step: u64,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, momentum: f64, schedule: LrSchedule) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        schedule.validate()?;
        Ok(OptimizerState {
            velocity: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            momentum,
            step: 0,
            schedule,
        })
    }

    /// `v ← μ·v + g; p ← p − lr(t)·v`, then clears gradients and advances
    /// `t`. Returns the learning rate used.
    pub fn momentum_step(&mut self, store: &mut ParamStore) -> Result<f64> {
        if !store.grads_ready() {
            return Err(Error::MissingGradient);
        }
        if self.velocity.len() != store.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} parameters, store has {}",
                self.velocity.len(),
                store.len()
            )));
        }
        let lr = self.schedule.lr_at(self.step)?;
        let (lr32, mu) = (lr as f32, self.momentum as f32);
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            for ((w, vel), &g) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(p.grad.data())
            {
                *vel = mu * *vel + g;
                *w -= lr32 * *vel;
            }
        }
        store.zero_grads();
        self.step += 1;
        Ok(lr)
    }
}

/// Mean softmax cross-entropy of the logits against the labels.
pub fn compute_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
    tape.softmax_cross_entropy(logits, labels)
}

/// Shuffled sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn batch_images(data: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
    let parts: Vec<&Tensor<f32>> = idx.iter().map(|&i| &data.samples[i].image).collect();
    Ok(Tensor::stack(&parts)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub steps: usize,
    /// Learning rate of the last step.
    pub last_lr: f64,
}

/// One pass over `data` in the shuffled order for `(seed, epoch)`.
/// The final partial batch is kept.
pub fn train_epoch(
    model: &Tkfnet,
    store: &mut ParamStore,
    data: &Dataset,
    state: &mut OptimizerState,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<EpochSummary> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Training("cannot train on an empty dataset".into()));
    }
    let order = epoch_order(data.len(), seed, epoch);
    let mut weighted = 0.0f64;
    let mut steps = 0;
    let mut last_lr = state.schedule.lr_at(state.step)?;
    for idx in order.chunks(batch_size) {
        let images = batch_images(data, idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
        let mut tape = Tape::<f32>::new();
        let p = store.bind(&mut tape, true);
        let x = tape.constant(images);
        let out = model.forward(&mut tape, &p, x)?;
        let loss = compute_loss(&mut tape, out.logits, &labels)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Training(format!("loss diverged at step {}", state.step)));
        }
        let grads = tape.backward(loss)?;
        store.accumulate_grads(&grads, &p);
        last_lr = state.momentum_step(store)?;
        weighted += value * idx.len() as f64;
        steps += 1;
    }
    Ok(EpochSummary {
        mean_loss: weighted / data.len() as f64,
        steps,
        last_lr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Diagonal over row sum; 0 for classes without samples.
    pub per_class_recall: Vec<f64>,
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Training(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= classes || p >= classes {
                return Err(Error::Training(format!(
                    "class index out of range ({l}, {p}) for {classes} classes"
                )));
            }
            confusion[l][p] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..classes).map(|i| confusion[i][i]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        Ok(Metrics {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            confusion,
            per_class_recall,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Logits for every sample, computed in batches of `batch_size`.
pub fn predict_logits(model: &Tkfnet, store: &ParamStore, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let q = model.config.classes;
    let mut rows = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let pred = model.predict(store, &batch_images(data, idx)?)?;
        rows.extend(pred.logits.data().chunks(q).map(<[f32]>::to_vec));
    }
    Ok(rows)
}

pub const EVAL_BATCH: usize = 64;

pub fn evaluate(model: &Tkfnet, store: &ParamStore, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Training("cannot evaluate an empty dataset".into()));
    }
    let preds: Vec<usize> = predict_logits(model, store, data, EVAL_BATCH)?
        .iter()
        .map(|r| argmax(r))
        .collect();
    Metrics::from_predictions(&data.labels(), &preds, model.config.classes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_end: f64,
    pub power: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            lr_init: 0.1,
            lr_end: 0.01,
            power: 0.5,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule length: every optimizer step of the full run.
    pub fn total_steps(&self, samples: usize) -> u64 {
        (self.epochs * samples.div_ceil(self.batch_size.max(1))) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Runs up to `cfg.epochs` epochs. `on_epoch` sees each record and the
/// updated parameters and may stop the run early.
pub fn fit(
    model: &Tkfnet,
    store: &mut ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore) -> ControlFlow<()>,
) -> Result<Vec<EpochRecord>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(records);
    }
    let schedule = LrSchedule::new(cfg.lr_init, cfg.lr_end, cfg.total_steps(data.len()), cfg.power)?;
    let mut state = OptimizerState::new(store, cfg.momentum, schedule)?;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let s = train_epoch(model, store, data, &mut state, cfg.batch_size, cfg.seed, epoch as u64)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss: s.mean_loss,
            lr: s.last_lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        records.push(rec);
        if on_epoch(&rec, store).is_break() {
            break;
        }
    }
    Ok(records)
}
