//! Run configuration: flat `key=value` files with `#` comments.
//!
//! The manifest written by every run uses the same format, so a run can be
//! repeated with `--config <out>/manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tkfnet::data::SynthSpec;
use tkfnet::train::TrainConfig;
use tkfnet::ModelKind;

use crate::error::{CliError, CliResult};

pub const DEFAULT_INPUT: usize = 224;
pub const DEFAULT_OUT: &str = "run";

/// Where samples come from: an image folder or `synth:CxNxS[:seed]`.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Folder(PathBuf),
    Synth(SynthSpec),
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.strip_prefix("synth:") {
            Some(spec) => Ok(DataSource::Synth(parse_synth(spec)?)),
            None if s.is_empty() => Err(CliError::config("empty data path")),
            None => Ok(DataSource::Folder(PathBuf::from(s))),
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Folder(p) => write!(f, "{}", p.display()),
            DataSource::Synth(s) => write!(f, "synth:{}", synth_string(s)),
        }
    }
}

/// Parses `CLASSESxPER_CLASSxSIZE[:SEED]` (or `...xHEIGHTxWIDTH`), e.g.
/// `7x20x64:3`. The seed defaults to 0.
pub fn parse_synth(s: &str) -> CliResult<SynthSpec> {
    let bad = || CliError::config(format!("bad synth spec `{s}` (expected CLASSESxPERxSIZE[:SEED])"));
    let (dims, seed) = match s.split_once(':') {
        Some((d, seed)) => (d, seed.parse::<u64>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let parts: Vec<usize> = dims
        .split('x')
        .map(|p| p.parse::<usize>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    let spec = match parts[..] {
        [classes, per_class, size] => SynthSpec::new(classes, per_class, size, seed),
        [classes, per_class, height, width] => SynthSpec {
            width,
            ..SynthSpec::new(classes, per_class, height, seed)
        },
        _ => return Err(bad()),
    };
    Ok(spec)
}

pub fn synth_string(s: &SynthSpec) -> String {
    if s.height == s.width {
        format!("{}x{}x{}:{}", s.classes, s.per_class, s.height, s.seed)
    } else {
        format!("{}x{}x{}x{}:{}", s.classes, s.per_class, s.height, s.width, s.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Expected class count; `None` takes it from the data.
    pub classes: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_end: f64,
    pub power: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Square input side after resizing.
    pub input: usize,
    /// Map pixels from [0, 1] to [-1, 1] before the network.
    pub normalize: bool,
    pub data: Option<DataSource>,
    pub test_data: Option<DataSource>,
    /// Stratified fraction of `data` held out for the final evaluation when
    /// no `test_data` is given.
    pub holdout: f64,
    pub out: PathBuf,
    /// Label order of the data the weights were trained on.
    pub class_names: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            model: ModelKind::Base,
            classes: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_end: t.lr_end,
            power: t.power,
            momentum: t.momentum,
            seed: t.seed,
            input: DEFAULT_INPUT,
            normalize: true,
            data: None,
            test_data: None,
            holdout: 0.0,
            out: PathBuf::from(DEFAULT_OUT),
            class_names: None,
        }
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::config(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    /// Sets one key. Keys accept both `lr_end` and `lr-end` spellings.
    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "model" => self.model = v.parse().map_err(|e: tkfnet::Error| CliError::config(e.to_string()))?,
            "classes" => self.classes = Some(value(&key, v)?),
            "epochs" => self.epochs = value(&key, v)?,
            "batch" | "batch_size" => self.batch_size = value(&key, v)?,
            "lr" | "lr_init" => self.lr_init = value(&key, v)?,
            "lr_end" => self.lr_end = value(&key, v)?,
            "power" => self.power = value(&key, v)?,
            "momentum" => self.momentum = value(&key, v)?,
            "seed" => self.seed = value(&key, v)?,
            "input" => self.input = value(&key, v)?,
            "normalize" => self.normalize = value(&key, v)?,
            "data" => self.data = Some(v.parse()?),
            "test_data" => self.test_data = Some(v.parse()?),
            "holdout" => self.holdout = value(&key, v)?,
            "out" => self.out = PathBuf::from(v),
            "class_names" => self.class_names = Some(v.split(',').map(str::to_owned).collect()),
            _ => return Err(CliError::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{origin}:{}: expected key=value", n + 1)))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_owned(), n + 1) {
                return Err(CliError::config(format!(
                    "{origin}:{}: `{k}` already set on line {prev}",
                    n + 1
                )));
            }
            self.set(k, v.trim())
                .map_err(|e| CliError::config(format!("{origin}:{}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::config(m));
        if self.batch_size == 0 {
            return fail("batch must be at least 1".into());
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return fail(format!("lr must be a positive number, got {}", self.lr_init));
        }
        if !(self.lr_end.is_finite() && self.lr_end >= 0.0 && self.lr_end <= self.lr_init) {
            return fail(format!("lr_end must be in [0, lr], got {}", self.lr_end));
        }
        if !(self.power.is_finite() && self.power >= 0.0) {
            return fail(format!("power must be >= 0, got {}", self.power));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail(format!("holdout must be in [0, 1), got {}", self.holdout));
        }
        if self.input == 0 {
            return fail("input size must be positive".into());
        }
        if self.classes == Some(0) {
            return fail("classes must be at least 1".into());
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_init: self.lr_init,
            lr_end: self.lr_end,
            power: self.power,
            momentum: self.momentum,
            seed: self.seed,
        }
    }

    /// Full `key=value` echo. Floats use the shortest exact representation
    /// so reading it back gives the same run.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k}={v}").expect("write to string");
        };
        kv("model", &self.model);
        if let Some(q) = self.classes {
            kv("classes", &q);
        }
        kv("epochs", &self.epochs);
        kv("batch", &self.batch_size);
        kv("lr", &self.lr_init);
        kv("lr_end", &self.lr_end);
        kv("power", &self.power);
        kv("momentum", &self.momentum);
        kv("seed", &self.seed);
        kv("input", &self.input);
        kv("normalize", &self.normalize);
        if let Some(d) = &self.data {
            kv("data", d);
        }
        if let Some(d) = &self.test_data {
            kv("test_data", d);
        }
        kv("holdout", &self.holdout);
        kv("out", &self.out.display());
        if let Some(names) = &self.class_names {
            kv("class_names", &names.join(","));
        }
        s
    }
}
