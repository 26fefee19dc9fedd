use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ddsim::report::{json_text, text_report};
use ddsim::sim::{run_source, LoadError, Mode, Options};

#[derive(Parser)]
#[command(name = "ddsim", version, about = "Simulate directive-based device data mapping scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and report device state, findings and assertions.
    Run(Args),
    /// Report findings only; partial deep copies are warnings.
    Check(Args),
}

#[derive(clap::Args)]
struct Args {
    file: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Include the full event log.
    #[arg(long)]
    trace: bool,
    /// Run every reduction in deterministic mode.
    #[arg(long)]
    deterministic_reductions: bool,
    /// Accepted for compatibility; simulated addresses are always deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Run(a) => (Mode::Run, a),
        Command::Check(a) => (Mode::Check, a),
    };
    let _ = args.seed;
    let src = match std::fs::read_to_string(&args.file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ddsim: cannot read {}: {e}", args.file.display());
            return ExitCode::from(2);
        }
    };
    let name = args
        .file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let options = Options {
        mode,
        deterministic_reductions: args.deterministic_reductions,
    };
    let sim = match run_source(&name, &src, options) {
        Ok(sim) => sim,
        Err(LoadError::Invalid(errors)) => {
            for e in errors {
                eprintln!("{}:{e}", args.file.display());
            }
            return ExitCode::from(2);
        }
        Err(e @ LoadError::Parse(_)) => {
            eprintln!("{}: {e}", args.file.display());
            return ExitCode::from(2);
        }
    };
    let out = match args.format {
        Format::Text => text_report(&sim, args.trace),
        Format::Json => json_text(&sim, args.trace),
    };
    print!("{out}");
    ExitCode::from(sim.exit_code() as u8)
}
