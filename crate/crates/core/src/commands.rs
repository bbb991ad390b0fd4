//! The `estimate`, `simulate`, `generate` and `oracle` subcommands. Each
//! takes a validated [`RunConfig`] and writes its artifacts; the binary only
//! parses flags and maps errors to exit codes.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::calibrate::{EstimateReport, EstimatorTag};
use crate::config::{GridPoint, RunConfig};
use crate::data::{self, check_dimensions};
use crate::dgp;
use crate::error::{Error, Result};
use crate::harness::{coverage_table, run_estimators, run_scenario, write_scenario_outputs, CoverageTable, ScenarioResult};
use crate::nuisance::{ContrastLearner, ContrastLearnerKind};
use crate::oracle::{
    oracle_estimands, sampling_propensity, weight_function, weight_gamma_minvar, OracleEstimands,
    WeightCoefficients,
};
use crate::rng::{stream_id, RngStream};

/// Stream-id tags for the subcommands that draw random numbers outside the
/// harness.
pub const ESTIMATE_TAG: u64 = 0x45;
pub const GENERATE_TAG: u64 = 0x47;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn config_value(config: &RunConfig) -> Result<Value> {
    Ok(serde_json::to_value(config)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorFailure {
    pub estimator: EstimatorTag,
    pub stage: Option<&'static str>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub config: RunConfig,
    pub reports: Vec<EstimateReport>,
    pub failures: Vec<EstimatorFailure>,
}

/// Reads the two CSV files and runs the requested estimators. Input and
/// shared-stage errors are returned; per-estimator errors are listed in
/// `failures`.
pub fn cmd_estimate(config: &RunConfig) -> Result<EstimateOutput> {
    config.validate()?;
    let (exp_path, obs_path) = config.input_paths()?;
    let exp = data::read_experimental_file(exp_path)?;
    let obs = data::read_observational_file(obs_path)?;
    check_dimensions(&exp, &obs)?;
    let kind = config.contrast_learner.unwrap_or(ContrastLearnerKind::KnnT);
    let learner = ContrastLearner::resolve(kind, None)?;
    if kind == ContrastLearnerKind::KernelT && exp[0].x.len() != 1 {
        return Err(Error::Config("kernel_t needs a single covariate".into()));
    }
    let rng = RngStream::new(config.seed, stream_id(&[ESTIMATE_TAG]));
    let results = run_estimators(&exp, &obs, &learner, &config.settings(), &rng)?;

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (estimator, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(EstimatorFailure {
                estimator,
                stage: e.stage(),
                message: e.root().to_string(),
            }),
        }
    }
    let out = EstimateOutput {
        config: config.clone(),
        reports,
        failures,
    };
    write_json(&config.out.join("estimate.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub summaries: Vec<PathBuf>,
    pub reps: Vec<PathBuf>,
    pub coverage_csv: PathBuf,
    pub coverage_json: PathBuf,
    #[serde(skip)]
    pub results: Vec<ScenarioResult>,
    #[serde(skip)]
    pub table: Option<CoverageTable>,
}

/// Runs one harness scenario per grid point and writes the per-scenario
/// files plus `coverage_table.csv` and `coverage_table.json`.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateOutput> {
    config.validate()?;
    let scenarios = config.scenarios()?;
    let cfg_value = config_value(config)?;
    let mut out = SimulateOutput {
        summaries: Vec::new(),
        reps: Vec::new(),
        coverage_csv: config.out.join("coverage_table.csv"),
        coverage_json: config.out.join("coverage_table.json"),
        results: Vec::new(),
        table: None,
    };
    for s in &scenarios {
        let result = run_scenario(s)?;
        let (reps, summary) = write_scenario_outputs(&result, &config.out, Some(&cfg_value))?;
        out.reps.push(reps);
        out.summaries.push(summary);
        out.results.push(result);
    }
    let table = coverage_table(&out.results)?;
    table.write_csv(File::create(&out.coverage_csv)?)?;
    write_json(
        &out.coverage_json,
        &serde_json::json!({ "run_config": cfg_value, "table": table }),
    )?;
    out.table = Some(table);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedFiles {
    pub id: String,
    pub dgp: crate::oracle::DgpSpec,
    pub exp_csv: PathBuf,
    pub obs_csv: PathBuf,
}

/// Draws one experimental and one observational dataset per grid point and
/// writes `<id>_exp.csv`, `<id>_obs.csv` and `generate_manifest.json`.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<GeneratedFiles>> {
    config.validate()?;
    if config.n == 0 || config.n_obs == 0 {
        return Err(Error::Config("sample sizes must be positive".into()));
    }
    let points = config.grid_points()?;
    std::fs::create_dir_all(&config.out)?;
    let mut files = Vec::new();
    for GridPoint { index, id, dgp } in points {
        let rng = RngStream::new(config.seed, stream_id(&[GENERATE_TAG, index as u64]));
        let pair = dgp::sample(&dgp, config.n, config.n_obs, &rng)?;
        let exp_csv = config.out.join(format!("{id}_exp.csv"));
        let obs_csv = config.out.join(format!("{id}_obs.csv"));
        data::write_experimental(File::create(&exp_csv)?, &pair.exp)?;
        data::write_observational(File::create(&obs_csv)?, &pair.obs)?;
        files.push(GeneratedFiles { id, dgp, exp_csv, obs_csv });
    }
    write_json(
        &config.out.join("generate_manifest.json"),
        &serde_json::json!({ "run_config": config_value(config)?, "files": files }),
    )?;
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub run_config: Value,
    pub id: String,
    pub dgp: crate::oracle::DgpSpec,
    pub psi: crate::basis::BasisExpansion,
    pub estimands: OracleEstimands,
    pub weights: WeightCoefficients,
    /// Path of the weight-grid CSV; univariate families only.
    pub weight_grid_csv: Option<PathBuf>,
}

/// Computes the population estimands and weight coefficients per grid point
/// and writes `oracle_<id>.json`. Univariate families also get
/// `oracle_<id>_weights.csv` with columns `x, w, lambda, pi`.
pub fn cmd_oracle(config: &RunConfig) -> Result<Vec<OracleReport>> {
    config.validate()?;
    let wg = config.weight_grid;
    if !(wg.points >= 2 && wg.x_min < wg.x_max && wg.x_min.is_finite() && wg.x_max.is_finite()) {
        return Err(Error::Config("weight_grid needs points >= 2 and x_min < x_max".into()));
    }
    if !(config.rho2 > 0.0 && config.rho2 < 1.0) {
        return Err(Error::Config(format!("rho2 must lie in (0,1), got {}", config.rho2)));
    }
    let points = config.grid_points()?;
    let cfg_value = config_value(config)?;
    std::fs::create_dir_all(&config.out)?;
    let mut out = Vec::new();
    for GridPoint { id, dgp, .. } in points {
        let estimands = oracle_estimands(&dgp, &config.psi, &config.quadrature)?;
        let weights = weight_gamma_minvar(&dgp, &config.psi, &estimands, &config.quadrature)?;
        let weight_grid_csv = if dgp.dim() == 1 {
            let path = config.out.join(format!("oracle_{id}_weights.csv"));
            let mut w = csv::Writer::from_writer(File::create(&path)?);
            w.write_record(["x", "w", "lambda", "pi"]).map_err(std::io::Error::from)?;
            for x in wg.xs() {
                let xv = [x];
                let wx = weight_function(&xv, &dgp, &config.psi, &estimands, &weights.gamma);
                let lambda = dgp.likelihood_ratio(&xv);
                let pi = sampling_propensity(&xv, config.rho2, &dgp)?;
                w.write_record([x, wx, lambda, pi].map(|v| format!("{v:.17e}")))
                    .map_err(std::io::Error::from)?;
            }
            w.flush()?;
            Some(path)
        } else {
            None
        };
        let report = OracleReport {
            run_config: cfg_value.clone(),
            id,
            dgp,
            psi: config.psi,
            estimands,
            weights,
            weight_grid_csv,
        };
        write_json(&config.out.join(format!("oracle_{}.json", report.id)), &report)?;
        out.push(report);
    }
    Ok(out)
}
