use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use smc_harness::config::{config_error, default_config, ConfigError, ExperimentConfig, ExperimentKind, Format};
use smc_harness::run_experiment;

#[derive(Parser)]
#[command(name = "smc", version, about = "Particle filter experiments with exact variance oracles")]
struct Cli {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving `<experiment>.csv` and `<experiment>.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, env = "SMC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run a filter (or replicates) and report estimates per step.
    Run,
    /// Replicate spread against the exact asymptotic variance.
    CltCheck,
    /// Log-log slopes of the fixed-parameter variances.
    RateFit,
    /// Exact variance against the stability bound.
    Stability,
    /// Multinomial versus residual selection.
    CompareSchemes,
    /// Joint versus marginalised filter.
    RbCompare,
    /// Growth of the log weight ratio under importance sampling.
    WeightDegeneracy,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Run => ExperimentKind::Run,
            Command::CltCheck => ExperimentKind::CltCheck,
            Command::RateFit => ExperimentKind::RateFit,
            Command::Stability => ExperimentKind::Stability,
            Command::CompareSchemes => ExperimentKind::CompareSchemes,
            Command::RbCompare => ExperimentKind::RbCompare,
            Command::WeightDegeneracy => ExperimentKind::WeightDegeneracy,
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    let kind = cli.command.kind();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => default_config(kind),
    };
    if cfg.experiment != kind {
        return Err(config_error(format!(
            "config describes `{}` but the subcommand is `{}`",
            cfg.experiment.as_str(),
            kind.as_str()
        )));
    }
    let seed = cfg.seed(cli.seed);
    let report = run_experiment(&cfg, seed)?;
    if let Some(dir) = cli.out.as_ref().or(cfg.output.dir.as_ref()) {
        let stem = cfg.output.stem.clone().unwrap_or_else(|| kind.as_str().to_string());
        let (csv, json) = report.write(dir, &stem)?;
        eprintln!("wrote {} and {}", csv.display(), json.display());
    }
    match cli.format.or(cfg.output.format).unwrap_or_default() {
        Format::Csv => print!("{}", report.to_csv()?),
        Format::Json => print!("{}", report.summary_json()?),
    }
    for c in report.failed_checks() {
        eprintln!("FAILED {}: {}", c.name, c.detail);
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
