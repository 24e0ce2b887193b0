use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use volterra_cli::config::{read_partial, Command, Format, PartialConfig};
use volterra_cli::{run, CliError};

/// Simulation and validation of stochastic Volterra equations with the
/// fractional Brownian motion kernel.
#[derive(Debug, Parser)]
#[command(name = "volterra", version)]
struct Args {
    /// Pipeline to run; may also come from the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// Hurst parameter in (0, 1).
    #[arg(long = "H")]
    hurst: Option<f64>,
    /// Number of grid steps on [0, 1], a power of two.
    #[arg(long = "N")]
    n_steps: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Picard tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// JSON config file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Args {
    fn partial(&self) -> PartialConfig {
        PartialConfig {
            command: self.command,
            hurst: self.hurst,
            n_steps: self.n_steps,
            n_paths: self.n_paths,
            seed: self.seed,
            tol: self.tol,
            output_path: self.output.clone(),
            format: self.format,
        }
    }
}

fn fail(err: &CliError, output: Option<&PathBuf>) -> ExitCode {
    let record = err.record();
    let text = serde_json::to_string_pretty(&record).unwrap_or_else(|_| err.to_string());
    eprintln!("{text}");
    if let Some(dir) = output {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    ExitCode::from(record.exit_code as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let file = match &args.config {
        Some(path) => match read_partial(path) {
            Ok(p) => p,
            Err(e) => return fail(&e, args.output.as_ref()),
        },
        None => PartialConfig::default(),
    };
    let cfg = match file.overlay(args.partial()).resolve() {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e, args.output.as_ref()),
    };
    match run(&cfg) {
        Ok(outcome) => {
            println!(
                "wrote {} files and manifest.json to {}",
                outcome.manifest.files.len(),
                cfg.output_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&cfg.output_path)),
    }
}
