//! Finite-difference verification of every differentiable op and of each
//! model stage.
//!
//! Checks run on `f64` tapes so that the numeric side of the comparison is
//! not dominated by rounding. Each stage reduces its output to a scalar with
//! a fixed random weighting (or the classification loss) before comparing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::dcif::Dcif;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, grad_check_at, GradCheckError, GradCheckReport};
use crate::model::{ModelConfig, Tkfnet};
use crate::ops::{Padding, PoolKind};
use crate::params::{Initializer, ParamStore};
use crate::tafe::Tafe;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::{Real, Shape, Tensor, TensorError};

/// Step for the per-op checks.
pub const EPS: f64 = 1e-3;
/// Step for the model-stage checks. Stages contain ReLU and max units, and a
/// step that crosses one of their switching points yields a one-sided
/// slope; in f64 a much smaller step stays accurate and makes such
/// crossings rare.
pub const MODULE_EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-3;
pub const MODULE_TOLERANCE: f64 = 1e-2;
pub const MODULE_NAMES: [&str; 5] = ["tensor-core", "backbone", "tafe", "dcif", "train"];

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Number of random seeds per tensor-core op.
    pub op_seeds: usize,
    /// Sampled parameter coordinates per model stage.
    pub samples: usize,
    /// Corrupts the backward pass of one op kind (negative control).
    pub fault: Option<OpKind>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            op_seeds: 100,
            samples: 64,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    /// `module` or `module/case`.
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    /// One merged entry per module, in [`MODULE_NAMES`] order.
    pub modules: Vec<CheckResult>,
    /// Per-op entries of the tensor-core module.
    pub ops: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.modules.iter().all(CheckResult::passed)
    }

    /// Failing check with the largest error relative to its tolerance.
    pub fn worst_failure(&self) -> Option<&CheckResult> {
        self.ops
            .iter()
            .chain(self.modules.iter().filter(|m| m.name != "tensor-core"))
            .filter(|c| !c.passed())
            .max_by(|a, b| {
                (a.report.max_rel_error / a.tolerance).total_cmp(&(b.report.max_rel_error / b.tolerance))
            })
    }
}

type Objective<T> = Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync>;

/// A scalar-valued function of some input tensors.
pub struct OpCase<T: Real> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<T>>,
    pub objective: Objective<T>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}

/// Values bounded away from zero, for kinked functions.
fn away_from_zero<T: Real>(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        T::of(if rng.random::<bool>() { m } else { -m })
    })
}

/// Root of the GeLU derivative. Near it the true slope is far smaller than
/// the central-difference truncation error, so relative error is undefined
/// in practice.
const GELU_SLOPE_ROOT: f64 = -0.751_791_524_693;

fn gelu_inputs<T: Real>(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let x = rng.random_range(-3.0..3.0);
        if (x - GELU_SLOPE_ROOT).abs() > 0.05 {
            break T::of(x);
        }
    })
}

/// Distinct values spaced 0.05 apart in random order, so a max never
/// changes hands under a finite-difference step.
fn spread<T: Real>(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<T> {
    let shape = shape.into();
    let n = shape.numel();
    let order = sample(rng, n, n).into_vec();
    let data = order.iter().map(|&k| T::of(k as f64 * 0.05 - 0.8)).collect();
    Tensor::new(shape, data).expect("sized")
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn weighted_sum<T: Real>(tape: &mut Tape<T>, y: Var, r: &Tensor<T>) -> Result<Var, TensorError> {
    let r = tape.constant(r.clone());
    let prod = tape.hadamard(y, r)?;
    Ok(tape.sum(prod))
}

fn case<T: Real>(
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    out_shape: Shape,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync + 'static,
) -> OpCase<T> {
    let r = uniform::<T>(rng, out_shape, -1.0, 1.0);
    OpCase {
        name,
        inputs,
        objective: Box::new(move |t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y, &r)
        }),
    }
}

/// Random instances of every differentiable op, all inputs ≤ 64 elements.
pub fn op_cases<T: Real>(seed: u64) -> Vec<OpCase<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut cases = Vec::new();

    let inputs = vec![
        uniform(rng, [1, 4, 4, 2], -1.0, 1.0),
        uniform(rng, [3, 3, 2, 2], -1.0, 1.0),
        uniform(rng, [1, 1, 1, 2], -1.0, 1.0),
    ];
    cases.push(case("conv2d_same", inputs, Shape::new(1, 4, 4, 2), rng, |t, v| {
        t.conv2d(v[0], v[1], v[2], 1, Padding::Same)
    }));
    let inputs = vec![
        uniform(rng, [1, 5, 5, 2], -1.0, 1.0),
        uniform(rng, [3, 3, 2, 3], -1.0, 1.0),
        uniform(rng, [1, 1, 1, 3], -1.0, 1.0),
    ];
    cases.push(case("conv2d_same_stride2", inputs, Shape::new(1, 3, 3, 3), rng, |t, v| {
        t.conv2d(v[0], v[1], v[2], 2, Padding::Same)
    }));
    let inputs = vec![
        uniform(rng, [2, 4, 4, 2], -1.0, 1.0),
        uniform(rng, [2, 2, 2, 3], -1.0, 1.0),
        uniform(rng, [1, 1, 1, 3], -1.0, 1.0),
    ];
    cases.push(case("conv2d_valid_stride2", inputs, Shape::new(2, 2, 2, 3), rng, |t, v| {
        t.conv2d(v[0], v[1], v[2], 2, Padding::Valid)
    }));
    let inputs = vec![
        uniform(rng, [2, 1, 1, 4], -1.0, 1.0),
        uniform(rng, [1, 1, 4, 3], -1.0, 1.0),
        uniform(rng, [1, 1, 1, 3], -1.0, 1.0),
    ];
    cases.push(case("linear", inputs, Shape::new(2, 1, 1, 3), rng, |t, v| {
        t.linear(v[0], v[1], v[2])
    }));

    let act = Shape::new(2, 3, 3, 2);
    cases.push(case("gelu", vec![gelu_inputs(rng, act)], act, rng, |t, v| Ok(t.gelu(v[0]))));
    cases.push(case("relu", vec![away_from_zero(rng, act)], act, rng, |t, v| Ok(t.relu(v[0]))));
    cases.push(case("sigmoid", vec![uniform(rng, act, -4.0, 4.0)], act, rng, |t, v| Ok(t.sigmoid(v[0]))));

    let m = Shape::new(2, 3, 3, 3);
    cases.push(case("spatial_mean", vec![uniform(rng, m, -1.0, 1.0)], m.pooled(), rng, |t, v| {
        t.spatial_mean(v[0])
    }));
    cases.push(case("spatial_var", vec![uniform(rng, m, -1.0, 1.0)], m.pooled(), rng, |t, v| {
        t.spatial_var(v[0])
    }));

    cases.push(case(
        "adaptive_avg_pool",
        vec![uniform(rng, [1, 5, 5, 2], -1.0, 1.0)],
        Shape::new(1, 2, 3, 2),
        rng,
        |t, v| t.adaptive_pool(PoolKind::Avg, v[0], (2, 3)),
    ));
    cases.push(case(
        "adaptive_max_pool",
        vec![spread(rng, [1, 4, 5, 3])],
        Shape::new(1, 3, 2, 3),
        rng,
        |t, v| t.adaptive_pool(PoolKind::Max, v[0], (3, 2)),
    ));
    cases.push(case(
        "global_max_pool",
        vec![spread(rng, [2, 3, 3, 2])],
        Shape::new(2, 1, 1, 2),
        rng,
        |t, v| t.adaptive_pool(PoolKind::Max, v[0], (1, 1)),
    ));

    let h = Shape::new(1, 3, 3, 2);
    let inputs = vec![uniform(rng, h, -1.0, 1.0), uniform(rng, h, -1.0, 1.0)];
    cases.push(case("hadamard", inputs, h, rng, |t, v| t.hadamard(v[0], v[1])));
    let inputs = vec![uniform(rng, [2, 3, 3, 2], -1.0, 1.0), uniform(rng, [2, 1, 1, 2], -1.0, 1.0)];
    cases.push(case("hadamard_broadcast", inputs, Shape::new(2, 3, 3, 2), rng, |t, v| {
        t.hadamard(v[0], v[1])
    }));
    let inputs = vec![uniform(rng, [1, 2, 2, 3], -1.0, 1.0), uniform(rng, [1, 2, 2, 2], -1.0, 1.0)];
    cases.push(case("concat_channels", inputs, Shape::new(1, 2, 2, 5), rng, |t, v| {
        t.concat_channels(v[0], v[1])
    }));
    let inputs = vec![uniform(rng, h, -1.0, 1.0), uniform(rng, h, -1.0, 1.0)];
    cases.push(case("add", inputs, h, rng, |t, v| t.add(v[0], v[1])));
    let inputs = vec![uniform(rng, h, -1.0, 1.0), uniform(rng, Shape::scalar(), -2.0, 2.0)];
    cases.push(case("scale", inputs, h, rng, |t, v| t.scale(v[0], v[1])));

    cases.push(OpCase {
        name: "sum",
        inputs: vec![uniform(rng, [1, 4, 4, 2], -1.0, 1.0)],
        objective: Box::new(|t, v| Ok(t.sum(v[0]))),
    });
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..7)).collect();
    cases.push(OpCase {
        name: "softmax_cross_entropy",
        inputs: vec![uniform(rng, [4, 1, 1, 7], -2.0, 2.0)],
        objective: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)),
    });
    cases
}

impl Shape {
    /// `(n, 1, 1, c)`.
    fn pooled(self) -> Shape {
        Shape::vector(self.n, self.c)
    }
}

fn with_fault<T: Real>(
    fault: Option<OpKind>,
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync,
) -> impl Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync {
    move |t, v| {
        if let Some(kind) = fault {
            t.inject_fault(kind);
        }
        f(t, v)
    }
}

fn check_error(e: GradCheckError) -> Error {
    match e {
        GradCheckError::Tensor(t) => Error::Tensor(t),
        other => Error::Training(format!("gradient check failed to run: {other}")),
    }
}

/// Runs every op case for `seeds` consecutive seeds starting at `seed`,
/// merging per op name.
pub fn check_ops(seed: u64, seeds: usize, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut merged: Vec<CheckResult> = Vec::new();
    for s in 0..seeds as u64 {
        for c in op_cases::<f64>(seed.wrapping_add(s)) {
            let obj = &c.objective;
            let report = grad_check(with_fault(fault, |t, v| obj(t, v)), &c.inputs, EPS).map_err(check_error)?;
            let name = format!("tensor-core/{}", c.name);
            match merged.iter_mut().find(|m| m.name == name) {
                Some(m) => m.report = m.report.clone().merge(report),
                None => merged.push(CheckResult {
                    name,
                    tolerance: OP_TOLERANCE,
                    report,
                }),
            }
        }
    }
    Ok(merged)
}

/// Coordinates to compare for a stage: `samples` random parameter scalars,
/// every `must` parameter's first element, and a few input elements.
fn pick_coords(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor<f64>],
    samples: usize,
    must: &[usize],
) -> Vec<(usize, usize)> {
    let offsets: Vec<usize> = inputs
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.numel();
            Some(o)
        })
        .collect();
    let param_scalars: usize = inputs[1..].iter().map(Tensor::numel).sum();
    let locate = |flat: usize| {
        let flat = flat + offsets[1];
        let i = offsets.partition_point(|&o| o <= flat) - 1;
        (i, flat - offsets[i])
    };
    let mut coords: Vec<(usize, usize)> = sample(rng, param_scalars, samples.min(param_scalars))
        .into_iter()
        .map(locate)
        .collect();
    for &m in must {
        if !coords.iter().any(|&(i, _)| i == m) {
            coords.push((m, 0));
        }
    }
    let image = inputs[0].numel();
    for k in sample(rng, image, 4.min(image)) {
        coords.push((0, k));
    }
    coords
}

/// Draws for check inputs and labels. Uses its own stream so they are
/// independent of the weights drawn by `Initializer::new(seed)`.
fn input_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn stage_inputs(store: &ParamStore, input: Tensor<f64>) -> Vec<Tensor<f64>> {
    let mut v = vec![input];
    v.extend(store.values::<f64>());
    v
}

fn stage(
    name: &str,
    seed: u64,
    samples: usize,
    inputs: &[Tensor<f64>],
    must: &[usize],
    fault: Option<OpKind>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> + Sync,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let coords = pick_coords(&mut rng, inputs, samples, must);
    let report = grad_check_at(with_fault(fault, f), inputs, &coords, MODULE_EPS).map_err(check_error)?;
    Ok(CheckResult {
        name: name.to_string(),
        tolerance: MODULE_TOLERANCE,
        report,
    })
}

fn as_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "verify",
            reason: other.to_string(),
        },
    }
}

/// Backbone of the small config on an 8×8 image.
pub fn check_backbone(seed: u64, samples: usize, fault: Option<OpKind>) -> Result<CheckResult> {
    let mut store = ParamStore::new();
    let cfg = BackboneConfig::small();
    let bb = Backbone::register(&cfg, &mut store, &mut Initializer::new(seed))?;
    let mut rng = input_rng(seed);
    let x = uniform::<f64>(&mut rng, [1, 8, 8, 3], -1.0, 1.0);
    let side = 8 / cfg.total_stride();
    let r = uniform::<f64>(&mut rng, [1, side, side, cfg.out_channels()], -1.0, 1.0);
    let inputs = stage_inputs(&store, x);
    stage("backbone", seed, samples, &inputs, &[], fault, |t, v| {
        let y = bb.extract_features(t, &v[1..], v[0]).map_err(as_tensor_error)?;
        weighted_sum(t, y, &r)
    })
}

/// TAFE on a `(1, 4, 4, 4)` map, always including alpha and beta.
pub fn check_tafe(seed: u64, samples: usize, fault: Option<OpKind>) -> Result<CheckResult> {
    let mut store = ParamStore::new();
    let tafe = Tafe::register(4, &mut store, &mut Initializer::new(seed))?;
    let mut rng = input_rng(seed);
    let x = uniform::<f64>(&mut rng, [1, 4, 4, 4], -1.0, 1.0);
    let r = uniform::<f64>(&mut rng, [1, 4, 4, 8], -1.0, 1.0);
    let inputs = stage_inputs(&store, x);
    let must = [1 + tafe.alpha.index(), 1 + tafe.beta.index()];
    stage("tafe", seed, samples, &inputs, &must, fault, |t, v| {
        let out = tafe.forward(t, &v[1..], v[0]).map_err(as_tensor_error)?;
        weighted_sum(t, out.output, &r)
    })
}

/// DCIF and head on a `(1, 2, 2, 4)` map, scored by the classification loss.
pub fn check_dcif(seed: u64, samples: usize, fault: Option<OpKind>) -> Result<CheckResult> {
    let mut store = ParamStore::new();
    let dcif = Dcif::register(4, 2, 7, &mut store, &mut Initializer::new(seed))?;
    let mut rng = input_rng(seed);
    let x = spread::<f64>(&mut rng, [1, 2, 2, 4]);
    let label = rng.random_range(0..7);
    let inputs = stage_inputs(&store, x);
    stage("dcif", seed, samples, &inputs, &[], fault, |t, v| {
        let out = dcif.forward(t, &v[1..], v[0]).map_err(as_tensor_error)?;
        t.softmax_cross_entropy(out.logits, &[label])
    })
}

/// Whole small model on a 16×16 image with 7 classes, scored by the loss.
pub fn check_model(seed: u64, samples: usize, fault: Option<OpKind>) -> Result<CheckResult> {
    let (model, store) = Tkfnet::build(&ModelConfig::small(7), seed)?;
    let mut rng = input_rng(seed);
    let x = uniform::<f64>(&mut rng, [1, 16, 16, 3], -1.0, 1.0);
    let label = rng.random_range(0..7);
    let inputs = stage_inputs(&store, x);
    let must = [1 + model.tafe.alpha.index(), 1 + model.tafe.beta.index()];
    stage("train", seed, samples, &inputs, &must, fault, |t, v| {
        let out = model.forward(t, &v[1..], v[0]).map_err(as_tensor_error)?;
        t.softmax_cross_entropy(out.logits, &[label])
    })
}

/// Runs every module's check.
pub fn verify_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let ops = check_ops(opts.seed, opts.op_seeds, opts.fault)?;
    let core = ops
        .iter()
        .map(|c| c.report.clone())
        .reduce(GradCheckReport::merge)
        .expect("at least one op case");
    let modules = vec![
        CheckResult {
            name: "tensor-core".into(),
            tolerance: OP_TOLERANCE,
            report: core,
        },
        check_backbone(opts.seed, opts.samples, opts.fault)?,
        check_tafe(opts.seed, opts.samples, opts.fault)?,
        check_dcif(opts.seed, opts.samples, opts.fault)?,
        check_model(opts.seed, opts.samples, opts.fault)?,
    ];
    Ok(VerifyReport { modules, ops })
}
