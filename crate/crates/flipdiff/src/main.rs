use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flipdiff::commands::{self, CliError, Command};
use flipdiff::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "flipdiff", version, about = "Quantum walks with flip-noise potentials: simulation, spectral and oracle checks")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (JSON). Optional for `report`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.directory` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// `dotted.path=value`, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .map_err(|e| CliError::Report(format!("thread pool: {e}")))?;
    }
    let cfg = match &args.config {
        Some(path) => Some(ExperimentConfig::load(path, &args.overrides)?),
        None => None,
    };
    let out = match (&args.out, &cfg) {
        (Some(dir), _) => dir.clone(),
        (None, Some(c)) => PathBuf::from(&c.output.directory),
        (None, None) => PathBuf::from("out"),
    };
    let summary = commands::run(args.command, cfg.as_ref(), &out)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flipdiff {}: {e}", args.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
