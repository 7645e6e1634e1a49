use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use astars::experiment::{emit_results, run_experiment, run_traces, ExperimentSpec, OutputFormat, RowStatus};
use astars::optimizer::gradcheck::{gradcheck_suite, GRADCHECK_THRESHOLD};
use astars::{Error, ScenarioConfig};

#[derive(Parser)]
#[command(name = "astars", version, about = "Active STAR surface simulator and optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write results, manifest and evaluated states.
    Run {
        spec: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Check that a scenario config parses and builds.
    Validate { config: PathBuf },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write PGAM and AO convergence traces for the spec's base scenario.
    Trace {
        spec: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::InvalidConfig(_) => "invalid-config",
        Error::Model(_) => "model",
        Error::InvalidState(_) => "invalid-state",
        Error::Infeasible { .. } => "infeasible",
        Error::Numeric(_) => "numeric",
        Error::Placement(_) => "placement",
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
    }
}

fn report(e: &Error) -> ExitCode {
    let path = match e {
        Error::Io { path, .. } | Error::Parse { path, .. } => Some(path.as_str()),
        _ => None,
    };
    let line = serde_json::json!({ "error": error_kind(e), "path": path, "message": e.to_string() });
    eprintln!("{line}");
    ExitCode::from(1)
}

fn run(command: Command) -> astars::Result<ExitCode> {
    match command {
        Command::Run { spec, output, format } => {
            let spec = ExperimentSpec::load(&spec)?;
            let table = run_experiment(&spec)?;
            let dir = output.unwrap_or_else(|| spec.output.clone());
            let format = match format {
                Format::Csv => OutputFormat::DelimitedTable,
                Format::Json => OutputFormat::StructuredText,
            };
            let path = emit_results(&table, &spec, &dir, format)?;
            let failed = table.rows.iter().filter(|r| r.status == RowStatus::Failed).count();
            println!("wrote {} rows ({failed} failed) to {}", table.rows.len(), path.display());
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let scenario = astars::build_scenario(&cfg)?;
            println!("ok: M={} N={} K={}", scenario.m(), scenario.n(), scenario.k());
        }
        Command::Gradcheck { states, seed } => {
            let report = gradcheck_suite(states, seed)?;
            println!("max relative error: {:.3e}", report.max_relative_error);
            println!(
                "per block: theta {:.3e}, beta {:.3e}, alpha {:.3e}",
                report.worst.theta, report.worst.beta, report.worst.alpha
            );
            if !(report.max_relative_error < GRADCHECK_THRESHOLD) {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "error": "gradcheck",
                        "message": format!("max relative error {:e} exceeds {:e}", report.max_relative_error, GRADCHECK_THRESHOLD),
                    })
                );
                return Ok(ExitCode::from(1));
            }
        }
        Command::Trace { spec, output } => {
            let spec = ExperimentSpec::load(&spec)?;
            let (pgam, ao) = run_traces(&spec)?;
            let dir = output.unwrap_or_else(|| spec.output.clone());
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            pgam.write_csv(dir.join("pgam_trace.csv"))?;
            ao.write_csv(dir.join("ao_trace.csv"))?;
            println!(
                "pgam best {:.6} ({} iterations), ao best {:.6} ({} iterations), written to {}",
                pgam.best_trace().final_objective(),
                pgam.best_trace().accepted_iterations(),
                ao.best_trace().final_objective(),
                ao.best_trace().accepted_iterations(),
                dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    run(cli.command).unwrap_or_else(|e| report(&e))
}
