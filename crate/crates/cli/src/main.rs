//! `tkre`: generate, pretrain, finetune, eval and ablate from one config file.

mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tkre_core::config::ExperimentConfig;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tkre", version, about = "Few-shot relation extraction pipeline")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the K-shot set and generate explanations and synthetic data.
    Generate,
    /// Pre-train the encoder with masked span LM and span contrastive loss.
    Pretrain,
    /// Fine-tune the relation classifier.
    Finetune,
    /// Evaluate the fine-tuned model on the test split.
    Eval,
    /// Run ablation variants end to end over replicate seeds.
    Ablate {
        /// Comma-separated variant names, e.g. "full,w/o ALL".
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    } else if cfg.output_dir.is_relative() {
        let base = path.parent().unwrap_or(std::path::Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Finetune => commands::finetune(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate { variants } => commands::ablate(&cfg, variants),
    }
    .map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tkre: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
