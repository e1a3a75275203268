//! `p2m`: dataset preparation, training, retargeting and evaluation from one config file.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use p2m_cli::{commands, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "p2m", version, about = "Pose-to-motion retargeting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the window and pose manifests.
    Prepare(ConfigArg),
    /// Write the synthetic source and target corpus.
    Fixtures(ConfigArg),
    /// Train and write checkpoints, the loss history and the resolved config.
    Train(ConfigArg),
    /// Translate every source clip to the target skeleton.
    Retarget(ConfigArg),
    /// Score retargeted clips against a reference set.
    Evaluate(ConfigArg),
    /// Precision and recall of retargeted poses against the target pose set.
    Pr(ConfigArg),
    /// Per-frame baseline: poses mapped one at a time, root copied.
    Baseline(ConfigArg),
    /// Print the default configuration with every field.
    Defaults,
}

#[derive(clap::Args, Debug)]
struct ConfigArg {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = |a: &ConfigArg| RunConfig::load(&a.config);
    match cli.command {
        Command::Prepare(a) => commands::prepare(&load(&a)?),
        Command::Fixtures(a) => commands::fixtures(&load(&a)?),
        Command::Train(a) => commands::train(&load(&a)?),
        Command::Retarget(a) => commands::retarget(&load(&a)?),
        Command::Evaluate(a) => commands::evaluate(&load(&a)?),
        Command::Pr(a) => commands::pr(&load(&a)?),
        Command::Baseline(a) => commands::baseline(&load(&a)?),
        Command::Defaults => {
            // a closed pipe (`p2m defaults | head`) is not an error
            let _ = writeln!(std::io::stdout(), "{}", RunConfig::default().to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("P2M_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
