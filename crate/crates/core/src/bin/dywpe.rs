use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dywpe::commands::{self, Outcome};
use dywpe::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    /// Finite-difference gradient check (tiny dimensions only).
    Gradcheck,
    /// DWT/IDWT round trip over lengths, wavelets and depths.
    Recon,
    /// Train one encoding over the configured seeds.
    Train,
    /// Train every variant over the configured seeds.
    Ablate,
    /// Time each encoding's forward pass against sequence length.
    Bench,
}

/// Wavelet positional encoding experiments.
///
/// Exit status: 0 when the command's checks pass, 1 when they run but fail,
/// 2 on bad input or configuration.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    verb: Verb,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, applied after the config file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> dywpe::Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for pair in &cli.overrides {
        cfg.set_pair(pair)?;
    }
    match cli.verb {
        Verb::Gradcheck => commands::cmd_gradcheck(&cfg),
        Verb::Recon => commands::cmd_recon(&cfg),
        Verb::Train => commands::cmd_train(&cfg),
        Verb::Ablate => commands::cmd_ablate(&cfg),
        Verb::Bench => commands::cmd_bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            let mut out = std::io::stdout().lock();
            for line in &outcome.lines {
                // A closed pipe only loses the report; the exit code still holds.
                if writeln!(out, "{line}").is_err() {
                    break;
                }
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
