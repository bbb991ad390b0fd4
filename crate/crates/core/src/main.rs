use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caltrans::commands::{cmd_estimate, cmd_generate, cmd_oracle, cmd_simulate};
use caltrans::config::{Overrides, RunConfig};
use caltrans::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "caltrans", version, about = "Calibrated estimation of transported treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the estimators on an experimental and an observational CSV file.
    Estimate(Flags),
    /// Run Monte Carlo scenarios over a DGP parameter grid.
    Simulate(Flags),
    /// Write simulated datasets for each grid point.
    Generate(Flags),
    /// Write population estimands and weight functions for each grid point.
    Oracle(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the replication pool.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of tau_bar,aipsw,collab.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    k_folds: Option<usize>,
    /// Calibration basis: poly1, poly2 or poly3.
    #[arg(long)]
    psi: Option<String>,
    /// Contrast learner: oracle, kernel_t, knn_t or ridge_poly<d>.
    #[arg(long)]
    learner: Option<String>,
    /// DGP family: univariate, multivariate or constant_effect.
    #[arg(long)]
    family: Option<String>,
    /// Parameter grid such as `theta=0,0.3,0.7` or `eta=0,0.5;sigma0_sq=1,2`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Experimental CSV (columns d, x1, ...).
    #[arg(long)]
    exp: Option<PathBuf>,
    /// Observational CSV (columns y, z, x1, ...).
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Experimental share of the fused sample for the sampling propensity.
    #[arg(long)]
    rho2: Option<f64>,
}

impl Flags {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            alpha: self.alpha,
            threads: self.threads,
            out: self.out.clone(),
            estimators: self.estimators.clone(),
            k_folds: self.k_folds,
            psi: self.psi.clone(),
            contrast_learner: self.learner.clone(),
            family: self.family.clone(),
            grid: self.grid.clone(),
            n: self.n,
            n_obs: self.n_obs,
            replications: self.replications,
            exp_csv: self.exp.clone(),
            obs_csv: self.obs.clone(),
            rho2: self.rho2,
        })?;
        config.validate()?;
        if let Some(t) = config.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        }
        Ok(config)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Estimate(f) => {
            let out = cmd_estimate(&f.load()?)?;
            print_json(&out)?;
            for fail in &out.failures {
                eprintln!(
                    "error: {} failed at stage {}: {}",
                    fail.estimator,
                    fail.stage.unwrap_or("unknown"),
                    fail.message
                );
            }
            Ok(if out.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Simulate(f) => {
            let out = cmd_simulate(&f.load()?)?;
            print_json(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate(f) => {
            print_json(&cmd_generate(&f.load()?)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(f) => {
            let reports = cmd_oracle(&f.load()?)?;
            let brief: Vec<_> = reports
                .iter()
                .map(|r| serde_json::json!({ "id": r.id, "estimands": r.estimands, "weight_grid_csv": r.weight_grid_csv }))
                .collect();
            print_json(&brief)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
