//! The `xdrec` command line: subcommands, config handling and exit codes.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::fmt;

use anyhow::Result;

use args::{Cli, Command};
use config::ExperimentConfig;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// A problem with the invocation, config or inputs rather than the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Runs one invocation; command output goes to `out`, progress to stderr.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = ExperimentConfig::load_or_default(cli.config.as_deref())
        .map_err(|e| UsageError(format!("{e:#}")))?;
    match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a, out),
        Command::Prepare(a) => commands::prepare(&cfg, a, out),
        Command::Train(a) => commands::train(&cfg, a, out),
        Command::Eval(a) => commands::eval(&cfg, a, out),
        Command::Probe(a) => commands::probe(&cfg, a, out),
        Command::Ablate(a) => commands::ablate(&cfg, a, out),
    }
}

/// 2 for usage, config and input errors; 3 for failures during a run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use xdrec_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) | E::Shape(_) | E::Parse { .. } | E::EmptyCorpus(_) => {
                    EXIT_USAGE
                }
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}
