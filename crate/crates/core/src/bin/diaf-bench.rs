use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use diaf::bench::{emit_report, run_experiment, write_report, ExperimentConfig, ReportFormat, RunStatus};

/// Runs the DIAF preconditioning pipeline on Matrix Market files and
/// reports density, conditioning, residual norm and BiCGSTAB iterations.
#[derive(Parser, Debug)]
#[command(name = "diaf-bench", version)]
struct Cli {
    /// Matrix Market file; repeat for several problems.
    #[arg(long = "matrix", required = true)]
    matrices: Vec<PathBuf>,
    #[command(flatten)]
    config: ExperimentConfig,
    /// Report file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = cli.config.validate() {
        eprintln!("diaf-bench: {e}");
        return ExitCode::from(1);
    }
    let rows: Vec<_> = cli
        .matrices
        .iter()
        .map(|m| {
            let cfg = ExperimentConfig {
                matrix: m.clone(),
                ..cli.config.clone()
            };
            let row = run_experiment(&cfg);
            if let (Some(stage), Some(err)) = (&row.failed_stage, &row.error) {
                eprintln!("diaf-bench: {}: {stage} failed: {err}", m.display());
            }
            row
        })
        .collect();

    let written = match &cli.out {
        Some(path) => emit_report(&rows, &cli.config, cli.format, path),
        None => write_report(&rows, &cli.config, cli.format, &mut std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("diaf-bench: {e}");
        return ExitCode::from(1);
    }

    // The worst outcome decides the exit status.
    let worst = rows
        .iter()
        .map(|r| r.status)
        .max_by_key(|s| match s {
            RunStatus::Converged => 0,
            RunStatus::NoConvergence => 1,
            RunStatus::Breakdown => 2,
            RunStatus::Failed => 3,
        })
        .unwrap_or(RunStatus::Converged);
    ExitCode::from(worst.exit_code() as u8)
}
