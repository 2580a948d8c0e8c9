//! `dasmae`: generate data, pre-train, evaluate and sweep from config files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::{EvalPaths, TrainPaths};
use config::RunConfig;
use dasmae_core::Error;

#[derive(Parser)]
#[command(name = "dasmae", version, about = "Masked-autoencoder pre-training for DAS waterfall plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory; synthesized from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pre-trained checkpoint; a freshly initialized encoder when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl EvalArgs {
    fn paths(&self) -> EvalPaths<'_> {
        EvalPaths {
            data: self.data.as_deref(),
            checkpoint: self.checkpoint.as_deref(),
            out: &self.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled dataset.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cache the spectrograms of a dataset next to it.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Masked-reconstruction pre-training; writes model.ckpt and loss_curve.csv.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to start from (loaded permissively).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe on frozen pooled features.
    Probe(EvalArgs),
    /// Probe, then fine-tune encoder and head together.
    Finetune(EvalArgs),
    /// Linear probe from `eval.k_per_class` labels per class, over `eval.seeds`.
    Fewshot(EvalArgs),
    /// Sweep one setting, all others fixed, over `eval.seeds`.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// mask-ratio, mask-strategy, stft-format or stage1-on-off.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis defaults when absent.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA and t-SNE coordinates of pooled features.
    Embed {
        #[command(flatten)]
        eval: EvalArgs,
        /// train, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Error rates of finished runs, with relative improvement over the first.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen { cfg, out } => commands::gen(&cfg.load()?, &out),
        Command::Preprocess { cfg, data } => commands::preprocess(&mut cfg.load()?, &data),
        Command::Pretrain { cfg, data, init, out } => commands::pretrain(
            &mut cfg.load()?,
            TrainPaths {
                data: data.as_deref(),
                init: init.as_deref(),
                out: &out,
            },
        ),
        Command::Probe(a) => commands::probe(&mut a.cfg.load()?, a.paths()),
        Command::Finetune(a) => commands::finetune(&mut a.cfg.load()?, a.paths()),
        Command::Fewshot(a) => commands::fewshot(&mut a.cfg.load()?, a.paths()),
        Command::Ablate { cfg, axis, values, out } => commands::ablate(&cfg.load()?, &axis, values.as_deref(), &out),
        Command::Embed { eval, split } => commands::embed(&mut eval.cfg.load()?, eval.paths(), &split),
        Command::Report { cfg, runs, out } => {
            cfg.load()?;
            commands::report_runs(&runs, out.as_deref())
        }
    }
}

/// 1 for usage and configuration, 2 for data, files and transfer, 3 for numerics.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 3,
        Some(e) if e.is_data() || matches!(e, Error::Transfer(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
