//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

use std::any::Any;
use std::fs;
use std::ops::ControlFlow;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tkfnet::data::{synth_dataset, SynthSpec};
use tkfnet::dcif::Dcif;
use tkfnet::gradcheck::grad_check_at;
use tkfnet::params::Initializer;
use tkfnet::tafe::Tafe;
use tkfnet::train::{evaluate, fit, LrSchedule, TrainConfig};
use tkfnet::verify::{self, op_cases, MODULE_EPS};
use tkfnet::{ModelConfig, ModelKind, ParamStore, Shape, Tape, Tensor, TensorError, Tkfnet};
use tkfnet_cli::commands::{self, CONFUSION, FINAL, MANIFEST, METRICS, WEIGHTS};
use tkfnet_cli::config::{DataSource, RunConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn text<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn permute_spatial(x: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(s, |[n, h, w, c]| {
        let src = perm[h * s.w + w];
        x.get(n, src / s.w, src % s.w, c)
    })
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn small_cfg(out: &Path, data: DataSource) -> RunConfig {
    RunConfig {
        model: ModelKind::Small,
        batch_size: 8,
        lr_init: 0.01,
        lr_end: 0.001,
        power: 0.5,
        seed: 0,
        input: 32,
        data: Some(data),
        out: out.to_owned(),
        ..RunConfig::default()
    }
}

/// Every differentiable op against central differences, eps 1e-3, 100 seeds.
fn op_oracle() -> Outcome {
    let start = Instant::now();
    for seed in 0..100 {
        for case in op_cases::<f64>(seed) {
            for t in &case.inputs {
                ensure(t.numel() <= 64, || format!("{} input has {} elements", case.name, t.numel()))?;
            }
        }
    }
    let results = verify::check_ops(0, 100, None).map_err(text)?;
    let required = [
        "conv2d_same",
        "conv2d_valid_stride2",
        "linear",
        "gelu",
        "relu",
        "sigmoid",
        "spatial_mean",
        "spatial_var",
        "adaptive_avg_pool",
        "adaptive_max_pool",
        "hadamard",
        "concat_channels",
        "add",
        "scale",
        "sum",
        "softmax_cross_entropy",
    ];
    for op in required {
        ensure(results.iter().any(|r| r.name == format!("tensor-core/{op}")), || {
            format!("no check for {op}")
        })?;
    }
    let mut worst = &results[0];
    for r in &results {
        ensure(r.report.checked >= 100, || format!("{} checked {} points", r.name, r.report.checked))?;
        ensure(r.report.max_rel_error <= 1e-3, || {
            format!("{} rel error {:.3e} ({:?})", r.name, r.report.max_rel_error, r.report.worst)
        })?;
        if r.report.max_rel_error > worst.report.max_rel_error {
            worst = r;
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{} ops x 100 seeds, worst {:.2e} in {}",
        results.len(),
        worst.report.max_rel_error,
        worst.name
    ))
}

fn to_tensor_error(e: tkfnet::Error) -> TensorError {
    match e {
        tkfnet::Error::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "model",
            reason: other.to_string(),
        },
    }
}

/// Whole small model, 16x16 input, 7 classes, cross-entropy loss: at least
/// 50 sampled parameter scalars plus alpha and beta.
fn model_oracle() -> Outcome {
    let start = Instant::now();
    let (model, store) = Tkfnet::build(&ModelConfig::small(7), 0).map_err(text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let image = uniform(&mut rng, [1, 16, 16, 3], -1.0, 1.0);
    let label = rng.random_range(0..7);
    let mut inputs = vec![image];
    inputs.extend(store.values::<f64>());

    let sizes: Vec<usize> = inputs[1..].iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = index::sample(&mut rng, total, 60)
        .into_iter()
        .map(|mut flat| {
            let mut i = 0;
            while flat >= sizes[i] {
                flat -= sizes[i];
                i += 1;
            }
            (1 + i, flat)
        })
        .collect();
    let alpha = 1 + model.tafe.alpha.index();
    let beta = 1 + model.tafe.beta.index();
    coords.retain(|&(i, _)| i != alpha && i != beta);
    coords.extend([(alpha, 0), (beta, 0)]);
    ensure(coords.len() >= 52, || format!("only {} coordinates", coords.len()))?;

    let report = grad_check_at(
        |t: &mut Tape<f64>, v| {
            let out = model.forward(t, &v[1..], v[0]).map_err(to_tensor_error)?;
            t.softmax_cross_entropy(out.logits, &[label])
        },
        &inputs,
        &coords,
        MODULE_EPS,
    )
    .map_err(text)?;
    ensure(report.checked == coords.len(), || format!("checked {} of {}", report.checked, coords.len()))?;
    ensure(report.max_rel_error <= 1e-2, || {
        format!("rel error {:.3e} at {:?}", report.max_rel_error, report.worst)
    })?;

    let harness = verify::check_model(0, 64, None).map_err(text)?;
    ensure(harness.passed() && harness.report.checked >= 50, || {
        format!("harness: {:?}", harness.report)
    })?;
    within(Duration::from_secs(300), start)?;
    Ok(format!(
        "{} parameter scalars incl. alpha, beta; worst {:.2e} (harness {:.2e})",
        coords.len(),
        report.max_rel_error,
        harness.report.max_rel_error
    ))
}

/// Hand-computed examples.
fn spot_checks() -> Outcome {
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= 1e-6, || format!("{what}: {a} vs {b}"));

    let mut store = ParamStore::new();
    let tafe = Tafe::register(1, &mut store, &mut Initializer::new(0)).map_err(text)?;
    store.get_mut(tafe.alpha).value = Tensor::scalar(2.0);
    store.get_mut(tafe.beta).value = Tensor::scalar(4.0);
    let mut tape = Tape::<f32>::new();
    let p = store.bind(&mut tape, false);
    let o1 = tape.constant(Tensor::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).map_err(text)?);
    let d = tafe.texture_descriptor(&mut tape, &p, o1).map_err(text)?;
    close(tape.value(d.mean).data()[0] as f64, 2.5, "mean")?;
    close(tape.value(d.variance).data()[0] as f64, 1.25, "variance")?;
    close(tape.value(d.fused).data()[0] as f64, 10.0, "descriptor")?;

    let mut store = ParamStore::new();
    let dcif = Dcif::register(1, 1, 2, &mut store, &mut Initializer::new(0)).map_err(text)?;
    for (name, v) in [
        ("dcif.fc1.weight", 2.0),
        ("dcif.fc2.weight", 3.0),
        ("dcif.fc1.bias", 0.0),
        ("dcif.fc2.bias", 0.0),
    ] {
        let id = store.id(name).ok_or_else(|| format!("no parameter {name}"))?;
        store.get_mut(id).value = Tensor::scalar(v);
    }
    let mut tape = Tape::<f32>::new();
    let p = store.bind(&mut tape, false);
    let theta = tape.constant(Tensor::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).map_err(text)?);
    let kappa = tape.adaptive_pool(tkfnet::PoolKind::Avg, theta, (1, 1)).map_err(text)?;
    close(tape.value(kappa).data()[0] as f64, 2.5, "pooled context")?;
    let k = dcif.global_context_encode(&mut tape, &p, theta).map_err(text)?;
    close(tape.value(k).data()[0] as f64, 15.0, "context K")?;

    let lr = LrSchedule::new(0.1, 0.01, 100, 0.5).map_err(text)?;
    let mid = lr.lr_at(50).map_err(text)?;
    close(mid, 0.073640, "lr midpoint")?;
    Ok(format!("mean 2.5, var 1.25, O 10, K 15, lr_at(50) {mid:.6}"))
}

/// Small model memorizes 7x5 synthetic images.
fn overfit() -> Outcome {
    let start = Instant::now();
    let data = synth_dataset(&SynthSpec::new(7, 5, 32, 0))
        .and_then(|d| d.preprocessed((32, 32), true))
        .map_err(text)?;
    let (model, mut store) = Tkfnet::build(&ModelConfig::small(7), 0).map_err(text)?;
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 8,
        lr_init: 0.01,
        lr_end: 0.001,
        power: 0.5,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut best = (0.0, 0);
    let mut eval_err = None;
    fit(&model, &mut store, &data, &cfg, |rec, store| match evaluate(&model, store, &data) {
        Ok(m) => {
            if m.accuracy > best.0 {
                best = (m.accuracy, rec.epoch);
            }
            if m.accuracy == 1.0 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        }
        Err(e) => {
            eval_err = Some(e.to_string());
            ControlFlow::Break(())
        }
    })
    .map_err(text)?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    ensure(best.0 == 1.0, || format!("best training accuracy {:.3} at epoch {}", best.0, best.1))?;
    within(Duration::from_secs(600), start)?;
    Ok(format!("100% training accuracy at epoch {}", best.1))
}

/// Train through the CLI on 7x100 images, test on an independent 7x20.
fn generalization() -> Outcome {
    let dir = tempfile::tempdir().map_err(text)?;
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    commands::cmd_synth(&SynthSpec::new(7, 100, 32, 0), &train_dir).map_err(text)?;
    commands::cmd_synth(&SynthSpec::new(7, 20, 32, 1), &test_dir).map_err(text)?;
    let out = dir.path().join("run");
    let cfg = RunConfig {
        epochs: 30,
        batch_size: 16,
        test_data: Some(DataSource::Folder(test_dir)),
        ..small_cfg(&out, DataSource::Folder(train_dir))
    };
    let outcome = commands::cmd_train(&cfg).map_err(text)?;
    ensure(outcome.eval_set == "test", || "evaluated on the wrong split".into())?;

    let csv = fs::read_to_string(out.join(CONFUSION)).map_err(text)?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    ensure(rows.len() == 7, || format!("{} confusion rows", rows.len()))?;
    for row in rows {
        let sum: u64 = row
            .split(',')
            .skip(1)
            .map(|v| v.parse::<u64>().map_err(text))
            .sum::<Result<u64, String>>()?;
        ensure(sum == 20, || format!("row `{row}` sums to {sum}"))?;
    }
    let accuracy: f64 = fs::read_to_string(out.join(FINAL))
        .map_err(text)?
        .lines()
        .find_map(|l| l.strip_prefix("accuracy="))
        .ok_or("no accuracy in final.txt")?
        .parse()
        .map_err(text)?;
    ensure(accuracy == outcome.metrics.accuracy, || "final.txt disagrees with the run".into())?;
    ensure(accuracy >= 0.9, || format!("test accuracy {accuracy:.3}"))?;
    Ok(format!("test accuracy {:.3} after {} epochs, rows sum to 20", accuracy, outcome.records.len()))
}

/// Default schedule endpoints and monotonicity.
fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let total = cfg.total_steps(12_271);
    let s = LrSchedule::new(cfg.lr_init, cfg.lr_end, total, cfg.power).map_err(text)?;
    let first = s.lr_at(0).map_err(text)?;
    let last = s.lr_at(total).map_err(text)?;
    ensure(first == 0.1, || format!("lr_at(0) = {first}"))?;
    ensure(last == 0.01, || format!("lr_at(total) = {last}"))?;
    let mut prev = f64::INFINITY;
    for i in 0..10_000u64 {
        let t = i * total / 9_999;
        let lr = s.lr_at(t).map_err(text)?;
        ensure(lr <= prev, || format!("lr rises at step {t}: {prev} -> {lr}"))?;
        prev = lr;
    }
    Ok(format!("0.1 -> 0.01 over {total} steps, monotone on 10000 points"))
}

/// Cross-entropy value and gradient against closed forms.
fn loss_oracle() -> Outcome {
    let labels = [0usize, 3, 6];
    let mut tape = Tape::<f32>::new();
    let z = tape.variable(Tensor::zeros([3, 1, 1, 7]));
    let loss = tape.softmax_cross_entropy(z, &labels).map_err(text)?;
    let value = tape.value(loss).data()[0] as f64;
    ensure((value - 7f64.ln()).abs() <= 1e-6, || format!("loss {value} vs ln 7"))?;
    let g = tape.backward(loss).map_err(text)?.wrt(z);
    for (i, &gv) in g.data().iter().enumerate() {
        let (n, k) = (i / 7, i % 7);
        let expect = (1.0 / 7.0 - if k == labels[n] { 1.0 } else { 0.0 }) / 3.0;
        ensure((gv as f64 - expect).abs() <= 1e-6, || format!("uniform grad[{n},{k}] {gv} vs {expect}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = Tensor::from_fn([4, 1, 1, 7], |_| rng.random_range(-3.0f32..3.0));
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..7)).collect();
    let mut tape = Tape::<f32>::new();
    let z = tape.variable(logits.clone());
    let loss = tape.softmax_cross_entropy(z, &labels).map_err(text)?;
    let g = tape.backward(loss).map_err(text)?.wrt(z);
    let mut expect_loss = 0.0;
    for (n, row) in logits.data().chunks(7).enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let zsum: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        expect_loss += (zsum.ln() + m - row[labels[n]] as f64) / 4.0;
        for (k, &v) in row.iter().enumerate() {
            let p = (v as f64 - m).exp() / zsum;
            let expect = (p - if k == labels[n] { 1.0 } else { 0.0 }) / 4.0;
            let got = g.data()[n * 7 + k] as f64;
            ensure((got - expect).abs() <= 1e-6, || format!("random grad[{n},{k}] {got} vs {expect}"))?;
        }
    }
    let got = tape.value(loss).data()[0] as f64;
    ensure((got - expect_loss).abs() <= 1e-6, || format!("random loss {got} vs {expect_loss}"))?;
    Ok(format!("uniform loss {value:.7} (ln 7 = {:.7}), gradients match", 7f64.ln()))
}

/// Base model on a 224x224 image.
fn shape_contract() -> Outcome {
    let (model, store) = Tkfnet::build(&ModelConfig::base(7), 0).map_err(text)?;
    let image = synth_dataset(&SynthSpec::new(1, 1, 224, 0))
        .and_then(|d| d.preprocessed((224, 224), true))
        .map_err(text)?
        .samples
        .remove(0)
        .image;
    let mut tape = Tape::<f32>::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(image);
    let out = model.forward(&mut tape, &p, x).map_err(text)?;
    let logits = tape.shape(out.logits);
    let features = tape.shape(out.features);
    let tafe_in = tape.shape(out.tafe.o1);
    let tafe_out = tape.shape(out.tafe.output);
    ensure(logits == Shape::new(1, 1, 1, 7), || format!("logits {logits}"))?;
    ensure(features == Shape::new(1, 14, 14, 128), || format!("features {features}"))?;
    ensure(tafe_out.c == 2 * features.c && tafe_out.c == 2 * tafe_in.c, || {
        format!("TAFE {features} -> {tafe_out}")
    })?;
    ensure((tafe_out.h, tafe_out.w) == (features.h, features.w), || format!("TAFE spatial {tafe_out}"))?;
    Ok(format!("logits {logits}, features {features}, TAFE out {tafe_out}"))
}

/// Two identical training runs, the second on a different thread count.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(text)?;
    let run = |name: &str| {
        let cfg = RunConfig {
            epochs: 3,
            ..small_cfg(&dir.path().join(name), DataSource::Synth(SynthSpec::new(7, 5, 32, 0)))
        };
        commands::cmd_train(&cfg).map_err(text)
    };
    run("a")?;
    #[cfg(feature = "parallel")]
    let threads = {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(text)?;
        pool.install(|| run("b"))?;
        "global pool vs 3-thread pool"
    };
    #[cfg(not(feature = "parallel"))]
    let threads = {
        run("b")?;
        "sequential"
    };
    for file in [METRICS, WEIGHTS, FINAL, CONFUSION] {
        let a = fs::read(dir.path().join("a").join(file)).map_err(text)?;
        let b = fs::read(dir.path().join("b").join(file)).map_err(text)?;
        ensure(a == b, || format!("{file} differs"))?;
    }
    let strip = |name: &str| -> Result<String, String> {
        let t = fs::read_to_string(dir.path().join(name).join(MANIFEST)).map_err(text)?;
        Ok(t.lines().filter(|l| !l.starts_with("out=")).collect::<Vec<_>>().join("\n"))
    };
    ensure(strip("a")? == strip("b")?, || "manifests differ beyond the output path".into())?;
    Ok(format!("metrics, weights, final and confusion byte-identical ({threads})"))
}

/// Gate range, pooling agreement on constant maps, descriptor invariance.
fn attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (model, store) = Tkfnet::build(&ModelConfig::small(7), 0).map_err(text)?;
    let mut gates = 0;
    for _ in 0..10 {
        let batch = uniform(&mut rng, [100, 16, 16, 3], -1.0, 1.0).cast::<f32>();
        let pred = model.predict(&store, &batch).map_err(text)?;
        for &e in pred.eta.data() {
            ensure(e > 0.0 && e < 1.0, || format!("model gate {e}"))?;
        }
        gates += pred.eta.numel();
    }

    let mut dstore = ParamStore::new();
    let dcif = Dcif::register(8, 2, 7, &mut dstore, &mut Initializer::new(1)).map_err(text)?;
    let mut tape = Tape::<f32>::new();
    let p = dstore.bind(&mut tape, false);
    let wild = tape.constant(uniform(&mut rng, [1000, 2, 2, 8], -60.0, 60.0).cast());
    let g = dcif.dual_pool_attention(&mut tape, &p, wild).map_err(text)?;
    for &e in tape.value(g.eta).data() {
        ensure(e > 0.0 && e < 1.0, || format!("saturated gate {e}"))?;
    }

    for v in [-3.0f32, -0.5, 0.0, 0.25, 7.0] {
        let x = tape.constant(Tensor::full([2, 3, 3, 8], v));
        let g = dcif.dual_pool_attention(&mut tape, &p, x).map_err(text)?;
        ensure(bits(tape.value(g.avg)) == bits(tape.value(g.max)), || {
            format!("avg and max branches differ for constant {v}")
        })?;
    }

    let mut tape = Tape::<f32>::new();
    let p = store.bind(&mut tape, false);
    for _ in 0..50 {
        let x = tape.constant(uniform(&mut rng, [1, 16, 16, 3], -1.0, 1.0).cast());
        let out = model.forward(&mut tape, &p, x).map_err(text)?;
        let o1 = tape.value(out.tafe.o1).clone();
        let s = o1.shape();
        let mut perm: Vec<usize> = (0..s.h * s.w).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let moved = tape.constant(permute_spatial(&o1, &perm));
        let a = out.tafe.descriptor;
        let b = model.tafe.texture_descriptor(&mut tape, &p, moved).map_err(text)?;
        for (name, va, vb) in [
            ("mean", a.mean, b.mean),
            ("variance", a.variance, b.variance),
            ("descriptor", a.fused, b.fused),
        ] {
            ensure(bits(tape.value(va)) == bits(tape.value(vb)), || format!("{name} changed under permutation"))?;
        }
    }
    Ok(format!("{gates} model gate values and 8000 saturated ones in (0,1); pools agree; descriptor invariant"))
}

fn panic_text(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("per-op gradient oracle", op_oracle),
        ("full-model gradient oracle", model_oracle),
        ("hand-derived spot checks", spot_checks),
        ("overfit 7x5 synthetic", overfit),
        ("generalization smoke test", generalization),
        ("schedule endpoints", schedule),
        ("loss oracle", loss_oracle),
        ("shape contract", shape_contract),
        ("training determinism", determinism),
        ("attention invariants", attention),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|p| Err(panic_text(p)));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
