use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use psloss_experiment::commands::{write_json, PREDICTIONS_FILE};
use psloss_experiment::{cmd_ablate, cmd_evaluate, cmd_sweep, cmd_train, ExperimentConfig, SweepParam};

#[derive(Parser)]
#[command(
    name = "psloss",
    version,
    about = "Train and evaluate forecasters with a patch-level structural loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML or JSON experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for result files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    Delta,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and report test metrics.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write per-window truth and prediction to the output directory.
        #[arg(long)]
        predictions: bool,
    },
    /// Run the full loss and its five ablations.
    Ablate(Common),
    /// Grid over lambda or delta.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print the default configuration as TOML.
    Defaults,
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let outcome = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome.result.test)?);
        }
        Command::Evaluate {
            common,
            checkpoint,
            predictions,
        } => {
            let cfg = load(&common)?;
            let dump = match (&cfg.out_dir, predictions) {
                (Some(dir), true) => {
                    std::fs::create_dir_all(dir)?;
                    Some(dir.join(PREDICTIONS_FILE))
                }
                (None, true) => anyhow::bail!("--predictions needs --out"),
                _ => None,
            };
            let report = cmd_evaluate(&cfg, &checkpoint, dump.as_deref())?;
            if let Some(dir) = &cfg.out_dir {
                write_json(&dir.join("metrics.json"), &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate(common) => {
            let table = cmd_ablate(&load(&common)?)?;
            print!("{}", table.render());
        }
        Command::Sweep { common, param, values } => {
            let param = match param {
                Param::Lambda => SweepParam::Lambda,
                Param::Delta => SweepParam::Delta,
            };
            let table = cmd_sweep(&load(&common)?, param, &values)?;
            print!("{}", table.render());
        }
        Command::Defaults => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
