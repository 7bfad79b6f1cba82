use std::path::PathBuf;
use std::process::ExitCode;

use carechoice::cli_io::{
    cmd_counterfactual, cmd_curves, cmd_did, cmd_estimate, cmd_simulate, RunConfig, RunContext,
};
use carechoice::severity::SeverityMeasure;
use clap::{Args, Parser, Subcommand};

/// Simulate, estimate and run policy experiments with the ambulatory versus
/// inpatient care choice model.
#[derive(Debug, Parser)]
#[command(name = "carechoice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic data set (patients.csv, claims.csv, truth.json).
    Simulate(Common),
    /// Estimate cost and preference parameters from a data directory.
    Estimate(Common),
    /// Difference-in-differences on a reform panel (panel.csv).
    Did(Common),
    /// Run policy scenarios at published or estimated parameters.
    Counterfactual(Common),
    /// Utility-over-severity curve data.
    Curves(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides population.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Input data directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Parameter file (params.json from `estimate`, or a bundle of the same shape).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Number of bootstrap replicates for preference standard errors.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Severity measure: discrete, pref, mod-severe or five-bin.
    #[arg(long)]
    severity: Option<SeverityMeasure>,
    /// Add the rural-hukou and minority weighting terms.
    #[arg(long)]
    rural_minority: bool,
    /// Scenario to run (label or kind); repeat to select several.
    #[arg(long)]
    scenario: Vec<String>,
    /// Worker threads (0 uses every core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn context(&self) -> carechoice::Result<RunContext> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.population.seed = seed;
        }
        if let Some(b) = self.bootstrap {
            config.estimation.bootstrap = b;
        }
        if let Some(m) = self.severity {
            config.estimation.measure = m;
        }
        if self.rural_minority {
            config.estimation.rural_minority = true;
        }
        Ok(RunContext {
            config,
            out: self.out.clone(),
            data: self.data.clone(),
            params: self.params.clone(),
            scenarios: self.scenario.clone(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&RunContext) -> carechoice::Result<_>) = match &cli.command {
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Estimate(c) => (c, cmd_estimate),
        Command::Did(c) => (c, cmd_did),
        Command::Counterfactual(c) => (c, cmd_counterfactual),
        Command::Curves(c) => (c, cmd_curves),
    };
    let result = common
        .context()
        .and_then(|ctx| carechoice::par::with_threads(common.threads, || run(&ctx)));
    match result {
        Ok(report) => {
            for p in &report.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
