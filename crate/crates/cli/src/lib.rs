//! The `sixd` command line: argument parsing, config loading and dispatch.

pub mod commands;
pub mod config;
pub mod error;
pub mod runs;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sixd_eval::{Experiment, ExperimentConfig};
use sixd_net::GradCheckConfig;

pub use commands::{LiftedPose, RefinedPose};
pub use config::{config_keys, keys_help, load_config, parse_override};
pub use error::CliError;
use runs::{EvalRun, LiftRun, RefineRun, SynthRun, TrainRun};

#[derive(Debug, Parser)]
#[command(name = "sixd", version, about = "5D pose regression pipeline: data synthesis, training, evaluation, lifting and refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; keys not given keep their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reference for reproducible output.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one config key by dot path, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset and its manifest.
    Synth(Common),
    /// Train a network on a dataset; writes a checkpoint and learning curves.
    Train(Common),
    /// Evaluate a checkpoint on a dataset.
    Eval(Common),
    /// Lift evaluated predictions to 6D poses with the sample depth.
    Lift(Common),
    /// Refine lifted poses with Generalized-ICP.
    Refine(Common),
    /// Run one of the experiments.
    Experiment {
        #[arg(value_parser = ["block_compare", "ablation", "symmetry_curves", "generalization"])]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck(Common),
}

/// The clap command with each subcommand's config keys appended to its help.
pub fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("synth", |c| c.after_help(keys_help::<SynthRun>()))
        .mut_subcommand("train", |c| c.after_help(keys_help::<TrainRun>()))
        .mut_subcommand("eval", |c| c.after_help(keys_help::<EvalRun>()))
        .mut_subcommand("lift", |c| c.after_help(keys_help::<LiftRun>()))
        .mut_subcommand("refine", |c| c.after_help(keys_help::<RefineRun>()))
        .mut_subcommand("experiment", |c| c.after_help(keys_help::<ExperimentConfig>()))
        .mut_subcommand("gradcheck", |c| c.after_help(keys_help::<GradCheckConfig>()))
}

/// Builds the typed config from `--config`, `--seed`, `--threads` and the
/// `--set` overrides, in that order of precedence (later wins).
fn build<T: Serialize + DeserializeOwned + Default>(
    common: &Common,
    seed_keys: &[&str],
    threads_key: Option<&str>,
) -> Result<T, CliError> {
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(seed) = common.seed {
        overrides.extend(seed_keys.iter().map(|k| (k.to_string(), Value::from(seed))));
    }
    if let Some(t) = common.threads {
        match threads_key {
            Some(k) => overrides.push((k.to_string(), Value::from(t))),
            None => return Err(CliError::Config("this command runs single-threaded and takes no --threads".into())),
        }
    }
    for s in &common.set {
        overrides.push(parse_override(s)?);
    }
    load_config(common.config.as_deref(), &overrides)
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out is required".into()))
}

/// Runs a parsed command and returns the lines for stdout.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let epoch_line = |name: &str, r: &sixd_net::EpochRecord| {
        format!(
            "{name}epoch {}: train loss {:.4}, val loss {:.4}, val translation {:.2} px, val orientation {:.2} deg",
            r.epoch, r.train.loss, r.val.loss, r.val.trans_px, r.val.rot_deg
        )
    };
    match &cli.command {
        Command::Synth(c) => {
            let run: SynthRun = build(c, &["synth.seed"], Some("threads"))?;
            run.validate()?;
            commands::synth(&run, out_dir(c)?)
        }
        Command::Train(c) => {
            let run: TrainRun = build(c, &["train.seed"], None)?;
            run.validate()?;
            let quiet = c.quiet;
            commands::train(&run, out_dir(c)?, |r| {
                if !quiet {
                    eprintln!("{}", epoch_line("", r));
                }
            })
        }
        Command::Eval(c) => {
            let run: EvalRun = build(c, &[], Some("threads"))?;
            run.validate()?;
            commands::eval(&run, out_dir(c)?)
        }
        Command::Lift(c) => {
            let run: LiftRun = build(c, &[], None)?;
            run.validate()?;
            commands::lift(&run, out_dir(c)?)
        }
        Command::Refine(c) => {
            let run: RefineRun = build(c, &[], Some("threads"))?;
            run.validate()?;
            commands::refine(&run, out_dir(c)?)
        }
        Command::Experiment { name, common } => {
            let which: Experiment = name.parse()?;
            let cfg: ExperimentConfig = build(common, &["synth.seed", "train.seed"], Some("threads"))?;
            runs::validate_experiment(&cfg)?;
            let quiet = common.quiet;
            commands::experiment(which, &cfg, out_dir(common)?, &|n: &str, r: &sixd_net::EpochRecord| {
                if !quiet {
                    eprintln!("{}", epoch_line(&format!("[{n}] "), r));
                }
            })
        }
        Command::Gradcheck(c) => {
            let cfg: GradCheckConfig = build(c, &["seed"], None)?;
            runs::validate_gradcheck(&cfg)?;
            commands::gradcheck(&cfg, c.out.as_deref())
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Output goes to stdout, diagnostics to
/// stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
