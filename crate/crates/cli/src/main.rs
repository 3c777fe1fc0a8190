//! `cdrscope`: runs the CDR analytics pipeline stage by stage or end to end.

mod config;
mod log;
mod output;
mod stages;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::log::{LogFormat, Logger};
use crate::output::Staging;
use crate::stages::{preflight, Run, Stage};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cdrscope_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(cdrscope_core::Error::Config(_) | cdrscope_core::Error::InfeasibleScenario(_)) => 1,
            CliError::Core(cdrscope_core::Error::Io(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "cdrscope", version, about = "Call detail record analytics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `output_dir` of the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize wide CDR files into event, subscriber, device and cell tables.
    Ingest {
        /// Overrides `inputs.cdr`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Resolve TACs to phone models, prices and release dates.
    Enrich,
    /// Build the phone, active and analysis cohorts.
    Filter,
    /// Merge cells into sites, tessellate coverage and map phone prices.
    Spatial,
    /// Radius of gyration and entropy per SIM and day type.
    Mobility,
    /// Z-score the studied day, find peaks and select responders.
    Events,
    /// Mobility histograms per group and their weighted PCA.
    Pca,
    /// Generate a synthetic scenario with ground truth.
    Synth {
        /// Overrides `inputs.scenario`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every analysis stage in one pass.
    Study,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Enrich => "enrich",
            Command::Filter => "filter",
            Command::Spatial => "spatial",
            Command::Mobility => "mobility",
            Command::Events => "events",
            Command::Pca => "pca",
            Command::Synth { .. } => "synth",
            Command::Study => "study",
        }
    }

    fn stages(&self) -> Vec<Stage> {
        match self {
            Command::Ingest { .. } => vec![Stage::Ingest],
            Command::Enrich => vec![Stage::Enrich],
            Command::Filter => vec![Stage::Filter],
            Command::Spatial => vec![Stage::Spatial],
            Command::Mobility => vec![Stage::Mobility],
            Command::Events => vec![Stage::Events],
            Command::Pca => vec![Stage::Pca],
            Command::Synth { .. } => vec![],
            Command::Study => Stage::ALL.to_vec(),
        }
    }
}

fn execute(cli: Cli, log: &Logger) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Ingest { input: Some(p) } => cfg.inputs.cdr = Some(p.clone()),
        Command::Synth { scenario: Some(p), .. } => cfg.inputs.scenario = Some(p.clone()),
        _ => {}
    }
    let out = cli
        .global
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --output-dir or set output_dir".into()))?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }

    let name = cli.command.name();
    let t = Instant::now();
    if let Command::Synth { seed, .. } = cli.command {
        let mut staging = Staging::begin(&out, name)?;
        let params = stages::synth(&cfg, seed, &mut staging, log)?;
        let outputs = staging.commit(json!({ "scenario": params }))?;
        log.emit(name, "committed", &[("duration_ms", json!(t.elapsed().as_millis() as u64)), ("files", json!(outputs.len()))]);
        return Ok(());
    }

    let stages = cli.command.stages();
    preflight(&stages, &cfg, &out)?;
    let staging = Staging::begin(&out, name)?;
    let mut run = Run::new(&cfg, &out, log, staging)?;
    for stage in stages {
        run.run(stage)?;
    }
    let params = serde_json::to_value(&cfg).map_err(cdrscope_core::Error::from)?;
    let outputs = run.into_staging().commit(params)?;
    log.emit(name, "committed", &[("duration_ms", json!(t.elapsed().as_millis() as u64)), ("files", json!(outputs.len()))]);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let log = Logger::new(cli.global.log_format);
    let command = cli.command.name();
    panic::set_hook(Box::new(|info| eprintln!("cdrscope: internal error: {info}")));
    match panic::catch_unwind(AssertUnwindSafe(|| execute(cli, &log))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let code = e.exit_code();
            log.emit(command, "failed", &[("exit_code", json!(code)), ("error", json!(e.to_string()))]);
            eprintln!("cdrscope: {e}");
            ExitCode::from(code)
        }
        Err(_) => ExitCode::from(3),
    }
}
