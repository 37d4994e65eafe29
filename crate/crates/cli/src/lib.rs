//! Command-line driver for TKFNet.
//!
//! Subcommands: `train`, `eval`, `infer`, `gradcheck`, `synth`. Errors are
//! printed as one `error[<kind>]: <reason>` line and map to exit codes
//! 1 (verification or training failure), 2 (config), 3 (I/O), 4 (shape or
//! class mismatch).

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

use args::{Cli, Command, RunArgs};
use commands::{MANIFEST, WEIGHTS};
use config::{parse_synth, RunConfig};
pub use error::{CliError, CliResult, ErrorKind};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TKF_THREADS";

/// Applies `TKF_THREADS` to the global worker pool and returns the thread
/// count in effect.
pub fn configure_threads() -> CliResult<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(CliError::config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => None,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = requested {
        // Fails only if the pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = requested;
    Ok(tkfnet::par::current_threads())
}

/// Base config for a command: `--config` if given, else `fallback` when it
/// exists, else defaults. Flags are applied on top.
fn resolve(run: &RunArgs, fallback: Option<&Path>) -> CliResult<RunConfig> {
    let mut cfg = match (&run.config, fallback) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(p)) if p.is_file() => RunConfig::from_file(p)?,
        _ => RunConfig::default(),
    };
    for (k, v) in run.overrides() {
        cfg.set(k, v).map_err(|e| CliError::config(format!("--{}: {}", k.replace('_', "-"), e.message)))?;
    }
    Ok(cfg)
}

/// Weights path plus the run config for eval and infer. Without
/// `--config`, the manifest next to the weights is used.
fn resolve_saved(run: &RunArgs, weights: &Option<PathBuf>) -> CliResult<(RunConfig, PathBuf)> {
    let weights = match weights {
        Some(w) => w.clone(),
        None => PathBuf::from(run.out.as_deref().unwrap_or(config::DEFAULT_OUT)).join(WEIGHTS),
    };
    let manifest = weights.parent().map(|d| d.join(MANIFEST));
    Ok((resolve(run, manifest.as_deref())?, weights))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(run) => {
            let cfg = resolve(&run, None)?;
            let out = commands::cmd_train(&cfg)?;
            println!(
                "{} accuracy {:.4} over {} samples",
                out.eval_set,
                out.metrics.accuracy,
                out.metrics.total()
            );
            println!("outputs in {}", out.out.display());
        }
        Command::Eval { run, weights } => {
            let (cfg, weights) = resolve_saved(&run, &weights)?;
            if run.data.is_none() {
                return Err(CliError::config("eval needs --data"));
            }
            let data = cfg.data.clone().expect("set from --data");
            let out = commands::cmd_eval(&cfg, &weights, &data)?;
            println!("accuracy {:.4} over {} samples", out.metrics.accuracy, out.metrics.total());
            println!("confusion matrix in {}", out.confusion_path.display());
        }
        Command::Infer {
            run,
            weights,
            dump_attention,
            image,
        } => {
            let (cfg, weights) = resolve_saved(&run, &weights)?;
            let inf = commands::cmd_infer(&cfg, &weights, &image, dump_attention)?;
            println!("predicted\t{}", inf.class_name());
            for (name, p) in inf.class_names.iter().zip(&inf.probabilities) {
                println!("{name}\t{p:.12}");
            }
            if let Some(p) = &inf.attention_path {
                println!("attention\t{}", p.display());
            }
        }
        Command::Gradcheck {
            model,
            seed,
            inject_fault,
        } => {
            let kind = model.parse().map_err(|e: tkfnet::Error| CliError::config(e.to_string()))?;
            let fault = inject_fault.as_deref().map(commands::parse_op_kind).transpose()?;
            let report = commands::cmd_gradcheck(kind, seed, fault)?;
            println!("module\tmax_rel_error\ttolerance\tchecked\tstatus");
            for m in &report.modules {
                println!(
                    "{}\t{:.3e}\t{:.0e}\t{}\t{}",
                    m.name,
                    m.report.max_rel_error,
                    m.tolerance,
                    m.report.checked,
                    if m.passed() { "ok" } else { "FAIL" }
                );
            }
            commands::gradcheck_verdict(&report)?;
        }
        Command::Synth { spec, out } => {
            let spec = parse_synth(&spec)?;
            let files = commands::cmd_synth(&spec, &out)?;
            println!("wrote {} images to {}", files.len(), out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first));
            return ErrorKind::Config.exit_code();
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
