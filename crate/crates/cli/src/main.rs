use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gravity_core::sim::{self, metrics_text, Scenario, ScenarioError, SimError};
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "gravity",
    version,
    about = "Deterministic oracle network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report and logs.
    Run {
        scenario: PathBuf,
        /// Output directory; defaults to `runs/<scenario name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the run length.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Check a scenario file and list every problem found.
    Validate { scenario: PathBuf },
    /// Print the metrics of a finished run.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}: no metrics section")]
    MissingMetrics(PathBuf),
    #[error("{path}: not a run report: {source}")]
    Report {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parses without validating so overrides apply first.
fn load(path: &Path) -> Result<Scenario, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Scenario {
        path: path.to_owned(),
        source: e.into(),
    })
}

fn run(
    scenario_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    ticks: Option<u64>,
) -> Result<(), CliError> {
    let mut scenario = load(scenario_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(ticks) = ticks {
        scenario.ticks = ticks;
    }
    let out = out.unwrap_or_else(|| {
        let stem = scenario_path.file_stem().unwrap_or_default();
        Path::new("runs").join(stem)
    });
    let outputs = sim::run(scenario).map_err(|e| match e {
        SimError::Invalid(v) => CliError::Scenario {
            path: scenario_path.to_owned(),
            source: v.into(),
        },
        other => other.into(),
    })?;
    outputs.write_to(&out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let value = serde_json::to_value(&outputs.report).expect("report serializes");
    emit(&metrics_text(&value));
    emit(&format!("output                  {}\n", out.display()));
    Ok(())
}

fn validate(path: &Path) -> Result<(), CliError> {
    let scenario = load(path)?;
    scenario.validate().map_err(|v| CliError::Scenario {
        path: path.to_owned(),
        source: v.into(),
    })?;
    emit(&format!("{}: ok\n", path.display()));
    Ok(())
}

fn report(dir: &Path, format: Format) -> Result<(), CliError> {
    let path = dir.join("report.json");
    let text = read(&path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| CliError::Report {
            path: path.clone(),
            source,
        })?;
    if !value["metrics"].is_object() {
        return Err(CliError::MissingMetrics(path));
    }
    match format {
        Format::Text => emit(&metrics_text(&value)),
        Format::Json => emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(&value["metrics"]).expect("valid json")
        )),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            ticks,
        } => run(&scenario, out, seed, ticks),
        Command::Validate { scenario } => validate(&scenario),
        Command::Report { run_dir, format } => report(&run_dir, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
