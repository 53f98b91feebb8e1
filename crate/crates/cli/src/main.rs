use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairssl_cli::commands::Flags;
use fairssl_cli::{load_context, run, Command};

#[derive(Parser)]
#[command(name = "fairssl", version, about = "Self-supervised timeseries pipeline with fairness and CKA audits")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate the synthetic dataset and its split.
    Synth,
    /// Contrastive pretraining.
    Pretrain(CheckpointArg),
    /// Fine-tune the pretrained encoder under one or more freeze masks.
    Finetune {
        /// Masks as `•∘•`/`101`, comma separated, or `all`.
        #[arg(long)]
        mask: Option<String>,
        /// Pretrained checkpoint (default runs/pretrain/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the supervised baseline.
    Supervised(CheckpointArg),
    /// Predictions, fairness reports and activation dumps.
    Evaluate {
        /// Evaluate one checkpoint instead of every run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// CKA grids between two evaluated models.
    Cka {
        #[arg(long)]
        attribute: Option<String>,
        /// One segment, or `random` for the balanced subset.
        #[arg(long)]
        segment: Option<String>,
    },
    /// Tables and figures from the evaluation artifacts.
    Report,
}

#[derive(Args)]
struct CheckpointArg {
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut flags = Flags::default();
    let command = match cli.command {
        Sub::Synth => Command::Synth,
        Sub::Pretrain(c) => {
            flags.checkpoint = c.checkpoint;
            Command::Pretrain
        }
        Sub::Finetune { mask, checkpoint } => {
            flags.mask = mask;
            flags.checkpoint = checkpoint;
            Command::Finetune
        }
        Sub::Supervised(c) => {
            flags.checkpoint = c.checkpoint;
            Command::Supervised
        }
        Sub::Evaluate { checkpoint } => {
            flags.checkpoint = checkpoint;
            Command::Evaluate
        }
        Sub::Cka { attribute, segment } => {
            flags.attribute = attribute;
            flags.segment = segment;
            Command::Cka
        }
        Sub::Report => Command::Report,
    };
    let result = load_context(cli.config.as_deref(), cli.out, cli.seed).and_then(|mut ctx| run(&mut ctx, command, &flags));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
