//! `kce`: kernelized concept erasure from the command line.

mod config;
mod pipeline;
mod reports;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "kce", version, about = "Kernelized concept erasure pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key=value` config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, label and split the data; write labels.tsv under <out>/data.
    Ingest(ConfigArgs),
    /// Fit Nystrom features, solve the game and train pre-image networks
    /// for every kernel and seed.
    Erase(ConfigArgs),
    /// Same-kernel adversary before and after erasure, per kernel family.
    EvalSame(ConfigArgs),
    /// Every adversary against every kernel's pre-images.
    EvalTransfer(ConfigArgs),
    /// WEAT on the original vectors and on each kernel's pre-images.
    Weat(ConfigArgs),
    /// Similarity-benchmark correlation before and after erasure.
    Simlex(ConfigArgs),
    /// Cosine nearest neighbors of some words.
    Neighbors {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also show neighbors after this trained run's pre-image network.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(required = true)]
        words: Vec<String>,
    },
    /// Compare the dual-form game with an explicit polynomial feature map.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 10)]
        anchors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest(a) => pipeline::ingest(&a.load()?)?,
        Command::Erase(a) => {
            let cfg = a.load()?;
            pipeline::check_inputs(&cfg)?;
            let failures = pipeline::erase(&cfg)?;
            if failures > 0 {
                eprintln!("{failures} run(s) failed; see erase_runs.tsv");
                return Ok(ExitCode::from(2));
            }
        }
        Command::EvalSame(a) => reports::eval_same(&a.load()?)?,
        Command::EvalTransfer(a) => reports::eval_transfer(&a.load()?)?,
        Command::Weat(a) => reports::run_weat(&a.load()?)?,
        Command::Simlex(a) => reports::run_simlex(&a.load()?)?,
        Command::Neighbors { cfg, run, words } => {
            reports::neighbors(&cfg.load()?, &words, run.as_deref())?
        }
        Command::OracleCheck {
            instances,
            anchors,
            seed,
        } => {
            let dev = reports::oracle_deviation(instances, anchors, seed)?;
            let pass = dev < reports::ORACLE_TOLERANCE;
            println!(
                "max deviation {dev:.3e} over {instances} instances ({anchors} anchors): {}",
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
