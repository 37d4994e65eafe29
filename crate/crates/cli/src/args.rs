use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tkfnet", version, about = "Train, evaluate and check TKFNet expression classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write weights, metrics and a final evaluation.
    Train(RunArgs),
    /// Evaluate saved weights on a dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Weights file [default: <out>/weights.tkfw].
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Classify a single .ppm or .rt32 image.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write the channel attention gate to <out>/attention.csv.
        #[arg(long)]
        dump_attention: bool,
        image: PathBuf,
    },
    /// Finite-difference gradient checks over every module.
    Gradcheck {
        #[arg(long, default_value = "small")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the backward pass of one op kind (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic dataset as class folders of PPM files.
    Synth {
        /// CLASSESxPER_CLASSxSIZE[:SEED], e.g. 7x20x64:0
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by train, eval and infer. Each one overrides the config
/// file value of the same name.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    /// base or small.
    #[arg(long)]
    pub model: Option<String>,
    /// Image folder, or synth:CxNxS[:SEED].
    #[arg(long)]
    pub data: Option<String>,
    /// Separate evaluation data for train.
    #[arg(long)]
    pub test_data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub lr_end: Option<String>,
    #[arg(long)]
    pub power: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    /// Square input side in pixels.
    #[arg(long)]
    pub input: Option<String>,
    /// Fraction of the data held out for evaluation.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
}

impl RunArgs {
    /// `(key, value)` pairs for every flag given.
    pub fn overrides(&self) -> Vec<(&'static str, &str)> {
        [
            ("seed", &self.seed),
            ("model", &self.model),
            ("data", &self.data),
            ("test_data", &self.test_data),
            ("out", &self.out),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("lr_end", &self.lr_end),
            ("power", &self.power),
            ("momentum", &self.momentum),
            ("input", &self.input),
            ("holdout", &self.holdout),
            ("classes", &self.classes),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}
