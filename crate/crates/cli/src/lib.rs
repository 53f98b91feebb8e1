//! Library half of the `fairssl` binary: configuration, error mapping and
//! the subcommands, so integration tests can drive them in-process.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use commands::{Context, Flags};
use config::ExperimentConfig;
use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Pretrain,
    Finetune,
    Supervised,
    Evaluate,
    Cka,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Supervised => "supervised",
            Command::Evaluate => "evaluate",
            Command::Cka => "cka",
            Command::Report => "report",
        }
    }
}

/// Reads the config (defaults when `path` is `None`), applies the command
/// line overrides and builds the output context.
pub fn load_context(path: Option<&std::path::Path>, out: Option<PathBuf>, seed: Option<u64>) -> CliResult<Context> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    Ok(Context::new(cfg, out))
}

pub fn run(ctx: &mut Context, command: Command, flags: &Flags) -> CliResult<()> {
    match command {
        Command::Synth => commands::cmd_synth(ctx, flags),
        Command::Pretrain => commands::cmd_pretrain(ctx, flags),
        Command::Finetune => commands::cmd_finetune(ctx, flags),
        Command::Supervised => commands::cmd_supervised(ctx, flags),
        Command::Evaluate => commands::cmd_evaluate(ctx, flags),
        Command::Cka => commands::cmd_cka(ctx, flags),
        Command::Report => commands::cmd_report(ctx, flags),
    }
}
