//! Subcommand implementations. Each returns structured results; printing is
//! left to the caller.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use tkfnet::data::{self, load_image_folder, synth_dataset, Dataset, SynthSpec};
use tkfnet::model::{argmax, softmax_rows};
use tkfnet::train::{evaluate, fit, EpochRecord, Metrics};
use tkfnet::verify::{verify_all, VerifyOptions, VerifyReport};
use tkfnet::weights;
use tkfnet::{ModelConfig, ModelKind, OpKind, ParamStore, Tkfnet};

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult, ErrorKind};

pub const MANIFEST: &str = "manifest.txt";
pub const WEIGHTS: &str = "weights.tkfw";
pub const METRICS: &str = "metrics.tsv";
pub const TIMING: &str = "timing.tsv";
pub const FINAL: &str = "final.txt";
pub const CONFUSION: &str = "confusion.csv";
pub const EVAL_SUMMARY: &str = "eval.txt";
pub const EVAL_CONFUSION: &str = "eval_confusion.csv";
pub const ATTENTION: &str = "attention.csv";

/// Parameter whose last dimension gives the class count of a weights file.
const HEAD_BIAS: &str = "dcif.head.bias";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Confusion matrix with class names as header row and first column.
pub fn confusion_csv(m: &Metrics, names: &[String]) -> String {
    let mut s = String::from("true\\pred");
    for n in names {
        s.push(',');
        s.push_str(&csv_field(n));
    }
    s.push('\n');
    for (name, row) in names.iter().zip(&m.confusion) {
        s.push_str(&csv_field(name));
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn summary_text(eval_set: &str, m: &Metrics, names: &[String]) -> String {
    let mut s = format!("eval_set={eval_set}\nsamples={}\naccuracy={}\n", m.total(), m.accuracy);
    for (name, r) in names.iter().zip(&m.per_class_recall) {
        s.push_str(&format!("recall.{name}={r}\n"));
    }
    s
}

pub fn load_source(src: &DataSource) -> CliResult<Dataset> {
    let ds = match src {
        DataSource::Folder(root) => {
            let load = load_image_folder(root)?;
            for p in &load.skipped {
                eprintln!("warning: skipped {} (unsupported extension)", p.display());
            }
            load.dataset
        }
        DataSource::Synth(spec) => synth_dataset(spec)?,
    };
    if ds.is_empty() {
        return Err(CliError::new(ErrorKind::Io, format!("no images found in {src}")));
    }
    Ok(ds)
}

fn check_names(expected: &[String], found: &[String], what: &str) -> CliResult<()> {
    if expected == found {
        return Ok(());
    }
    Err(CliError::mismatch(format!(
        "{what} has {} classes [{}], expected {} [{}]",
        found.len(),
        found.join(","),
        expected.len(),
        expected.join(",")
    )))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// Final evaluation on the test split, or on the training data when
    /// there is none.
    pub metrics: Metrics,
    pub eval_set: &'static str,
    pub class_names: Vec<String>,
    pub out: PathBuf,
}

/// Trains from scratch and writes the manifest, weights, per-epoch metrics
/// and the final evaluation into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let src = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::config("no training data (set data=DIR or data=synth:CxNxS)"))?;
    let full = load_source(src)?;
    let (train, test) = match &cfg.test_data {
        Some(t) => {
            let test = load_source(t)?;
            check_names(&full.class_names, &test.class_names, "test data")?;
            (full, Some(test))
        }
        None if cfg.holdout > 0.0 => {
            let (a, b) = full.split(cfg.holdout, cfg.seed)?;
            (a, (!b.is_empty()).then_some(b))
        }
        None => (full, None),
    };
    if train.is_empty() {
        return Err(CliError::config("holdout leaves no training samples"));
    }
    let q = train.num_classes();
    if let Some(expected) = cfg.classes.filter(|&c| c != q) {
        return Err(CliError::mismatch(format!(
            "config expects {expected} classes, training data has {q}"
        )));
    }
    if let Some(names) = &cfg.class_names {
        check_names(names, &train.class_names, "training data")?;
    }
    let (model, mut store) = Tkfnet::build(&ModelConfig::for_kind(cfg.model, q), cfg.seed)?;
    let stride = model.config.backbone.total_stride();
    if !cfg.input.is_multiple_of(stride) {
        return Err(CliError::config(format!(
            "input {} is not a multiple of the {} model stride {stride}",
            cfg.input, cfg.model
        )));
    }
    let size = (cfg.input, cfg.input);
    let train_p = train.preprocessed(size, cfg.normalize)?;
    let test_p = test.map(|t| t.preprocessed(size, cfg.normalize)).transpose()?;

    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let manifest = RunConfig {
        classes: Some(q),
        class_names: Some(train.class_names.clone()),
        ..cfg.clone()
    };
    write_file(
        &cfg.out.join(MANIFEST),
        format!(
            "# tkfnet train manifest; rerun with --config {MANIFEST}\n# train_samples={} eval_samples={}\n{}",
            train_p.len(),
            test_p.as_ref().map_or(train_p.len(), Dataset::len),
            manifest.to_text()
        )
        .as_bytes(),
    )?;

    let metrics_path = cfg.out.join(METRICS);
    let timing_path = cfg.out.join(TIMING);
    let mut metrics_out = create(&metrics_path)?;
    let mut timing_out = create(&timing_path)?;
    let header = writeln!(metrics_out, "epoch\tloss\tlr").and_then(|_| writeln!(timing_out, "epoch\tseconds"));
    header.map_err(|e| CliError::io(&metrics_path, e))?;
    let mut write_err = None;
    let records = fit(&model, &mut store, &train_p, &cfg.train_config(), |rec, _| {
        eprintln!(
            "epoch {}/{}  loss {:.6}  lr {:.6}  {:.2}s",
            rec.epoch, cfg.epochs, rec.loss, rec.lr, rec.seconds
        );
        let res = writeln!(metrics_out, "{}\t{}\t{}", rec.epoch, rec.loss, rec.lr)
            .and_then(|_| writeln!(timing_out, "{}\t{:.6}", rec.epoch, rec.seconds));
        match res {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                write_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::io(&metrics_path, e));
    }
    metrics_out.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    timing_out.flush().map_err(|e| CliError::io(&timing_path, e))?;

    weights::save_params(&store, &cfg.out.join(WEIGHTS))?;
    let (eval_set, eval_data) = match &test_p {
        Some(t) => ("test", t),
        None => ("train", &train_p),
    };
    let metrics = evaluate(&model, &store, eval_data)?;
    let mut summary = summary_text(eval_set, &metrics, &train.class_names);
    summary.push_str(&format!("epochs_run={}\n", records.len()));
    if let Some(last) = records.last() {
        summary.push_str(&format!("final_loss={}\n", last.loss));
    }
    write_file(&cfg.out.join(FINAL), summary.as_bytes())?;
    write_file(
        &cfg.out.join(CONFUSION),
        confusion_csv(&metrics, &train.class_names).as_bytes(),
    )?;
    Ok(TrainOutcome {
        records,
        metrics,
        eval_set,
        class_names: train.class_names,
        out: cfg.out.clone(),
    })
}

/// Builds the model described by `cfg` and loads `path` into it. The class
/// count comes from the file's head.
pub fn load_model(cfg: &RunConfig, path: &Path) -> CliResult<(Tkfnet, ParamStore)> {
    let records = weights::read_file(path)?;
    let q = records
        .iter()
        .find(|(n, _)| n == HEAD_BIAS)
        .map(|(_, t)| t.numel())
        .ok_or_else(|| CliError::mismatch(format!("{}: no `{HEAD_BIAS}` record", path.display())))?;
    if let Some(c) = cfg.classes.filter(|&c| c != q) {
        return Err(CliError::mismatch(format!(
            "config expects {c} classes, weights have {q}"
        )));
    }
    let (model, mut store) = Tkfnet::build(&ModelConfig::for_kind(cfg.model, q), cfg.seed)?;
    weights::apply_records(&mut store, records).map_err(|e| {
        CliError::mismatch(format!("{e} (is this a {} model?)", cfg.model))
    })?;
    Ok((model, store))
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub class_names: Vec<String>,
    pub confusion_path: PathBuf,
}

/// Evaluates saved weights on `data`; writes `eval.txt` and
/// `eval_confusion.csv` into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig, weights_path: &Path, data: &DataSource) -> CliResult<EvalOutcome> {
    cfg.validate()?;
    let (model, store) = load_model(cfg, weights_path)?;
    let ds = load_source(data)?;
    let q = model.config.classes;
    if ds.num_classes() != q {
        return Err(CliError::mismatch(format!(
            "dataset has {} classes, weights have {q}",
            ds.num_classes()
        )));
    }
    if let Some(names) = &cfg.class_names {
        check_names(names, &ds.class_names, "evaluation data")?;
    }
    let ds = ds.preprocessed((cfg.input, cfg.input), cfg.normalize)?;
    let metrics = evaluate(&model, &store, &ds)?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    write_file(
        &cfg.out.join(EVAL_SUMMARY),
        summary_text(&data.to_string(), &metrics, &ds.class_names).as_bytes(),
    )?;
    let confusion_path = cfg.out.join(EVAL_CONFUSION);
    write_file(&confusion_path, confusion_csv(&metrics, &ds.class_names).as_bytes())?;
    Ok(EvalOutcome {
        metrics,
        class_names: ds.class_names,
        confusion_path,
    })
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub class_index: usize,
    pub class_names: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Attention gate, one value per fused channel.
    pub eta: Vec<f32>,
    pub attention_path: Option<PathBuf>,
}

impl Inference {
    pub fn class_name(&self) -> &str {
        &self.class_names[self.class_index]
    }
}

/// Classifies one `.ppm` or `.rt32` image.
pub fn cmd_infer(cfg: &RunConfig, weights_path: &Path, image: &Path, dump_attention: bool) -> CliResult<Inference> {
    cfg.validate()?;
    let (model, store) = load_model(cfg, weights_path)?;
    let q = model.config.classes;
    let img = data::decode_image_file(image)?;
    let x = data::preprocess(&img, (cfg.input, cfg.input), cfg.normalize)?;
    let pred = model.predict(&store, &x)?;
    let probabilities = softmax_rows(&pred.logits).swap_remove(0);
    let class_index = argmax(pred.logits.data());
    let class_names = match &cfg.class_names {
        Some(n) if n.len() == q => n.clone(),
        _ => (0..q).map(|k| format!("class{k}")).collect(),
    };
    let eta = pred.eta.data().to_vec();
    let attention_path = if dump_attention {
        fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
        let path = cfg.out.join(ATTENTION);
        let mut s = String::from("channel,eta\n");
        for (c, e) in eta.iter().enumerate() {
            s.push_str(&format!("{c},{e}\n"));
        }
        write_file(&path, s.as_bytes())?;
        Some(path)
    } else {
        None
    };
    Ok(Inference {
        class_index,
        class_names,
        probabilities,
        eta,
        attention_path,
    })
}

/// Accepted names for `--inject-fault`.
pub fn parse_op_kind(s: &str) -> CliResult<OpKind> {
    Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "conv2d" | "conv" => OpKind::Conv2d,
        "activation" => OpKind::Activation,
        "spatialmean" => OpKind::SpatialMean,
        "spatialvar" => OpKind::SpatialVar,
        "adaptivepool" | "pool" => OpKind::AdaptivePool,
        "hadamard" => OpKind::Hadamard,
        "concat" => OpKind::Concat,
        "add" => OpKind::Add,
        "scale" => OpKind::Scale,
        "sum" => OpKind::Sum,
        "crossentropy" => OpKind::CrossEntropy,
        _ => return Err(CliError::config(format!("unknown op kind `{s}`"))),
    })
}

/// Runs the finite-difference suite. Only the small model is supported.
pub fn cmd_gradcheck(model: ModelKind, seed: u64, fault: Option<OpKind>) -> CliResult<VerifyReport> {
    if model != ModelKind::Small {
        return Err(CliError::config("gradcheck runs on the small model only"));
    }
    Ok(verify_all(&VerifyOptions {
        seed,
        fault,
        ..VerifyOptions::default()
    })?)
}

/// `Ok` when every module is within tolerance, otherwise a verification
/// error naming the worst offender.
pub fn gradcheck_verdict(report: &VerifyReport) -> CliResult<()> {
    match report.worst_failure() {
        None => Ok(()),
        Some(w) => {
            let at = w
                .report
                .worst
                .as_ref()
                .map(|c| format!(" (input {} element {})", c.input, c.index))
                .unwrap_or_default();
            Err(CliError::new(
                ErrorKind::Verify,
                format!(
                    "worst offender {}: max rel error {:.3e} exceeds {:.0e}{at}",
                    w.name, w.report.max_rel_error, w.tolerance
                ),
            ))
        }
    }
}

/// Writes `spec` as `out/<class>/<class>_NNNNN.ppm`.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<Vec<PathBuf>> {
    let ds = synth_dataset(spec)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    Ok(data::write_image_folder(&ds, out)?)
}
