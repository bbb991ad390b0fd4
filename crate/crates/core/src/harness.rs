//! Monte Carlo driver: replicates a simulation scenario, runs the requested
//! estimators, and aggregates bias, variance, MSE, coverage and CI width
//! against each estimator's own estimand.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_baseline_inputs, estimate_aipsw, estimate_collab, BaselineConfig};
use crate::basis::BasisExpansion;
use crate::calibrate::{tau_bar_from_contrast, EstimateReport, EstimatorTag};
use crate::data::{check_dimensions, ExperimentalSample, ObservationalSample};
use crate::dgp::{self, SimulatedPair};
use crate::error::{Error, Result, StageExt};
use crate::folds::partition_folds;
use crate::nuisance::{fit_contrast_crossfit, ContrastLearner, ContrastLearnerKind};
use crate::oracle::{oracle_estimands, DgpSpec, OracleEstimands, QuadratureSpec};
use crate::rng::{role, stream_id, RngStream};

/// Share of failed replications above which a scenario is flagged.
pub const UNRELIABLE_FAILURE_SHARE: f64 = 0.10;
/// Stream-id tag for simulation replications.
pub const SIMULATE_TAG: u64 = 0x51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    /// Position of the scenario in its grid; part of every replication's
    /// stream id.
    #[serde(default)]
    pub index: u64,
    pub dgp: DgpSpec,
    pub n: usize,
    pub n_obs: usize,
    pub replications: usize,
    pub estimators: Vec<EstimatorTag>,
    pub contrast_learner: ContrastLearnerKind,
    pub k_folds: usize,
    pub psi: BasisExpansion,
    pub alpha: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.n == 0 || self.n_obs == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.k_folds == 0 || self.k_folds > self.n_obs {
            return Err(Error::Config(format!("k_folds must lie in 1..={}", self.n_obs)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
            return Err(Error::Config(format!("scenario id {:?} must be a nonempty file-name-safe token", self.id)));
        }
        Ok(())
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            estimators: self.estimators.clone(),
            k_folds: self.k_folds,
            psi: self.psi,
            alpha: self.alpha,
            baseline: self.baseline,
        }
    }

    pub fn replication_stream(&self, rep: usize) -> RngStream {
        RngStream::new(self.master_seed, stream_id(&[SIMULATE_TAG, self.index, rep as u64]))
    }
}

/// Produces the estimator reports for one replication. Implementations
/// must depend only on `(rep, rng)` so that results do not depend on
/// execution order.
pub trait ReplicationEstimator: Sync {
    fn run(&self, config: &ScenarioConfig, rep: usize, rng: &RngStream) -> Vec<(EstimatorTag, Result<EstimateReport>)>;
}

/// Settings shared by every estimator run on one pair of datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    pub estimators: Vec<EstimatorTag>,
    pub k_folds: usize,
    pub psi: BasisExpansion,
    pub alpha: f64,
    pub baseline: BaselineConfig,
}

/// Runs the requested estimators on one pair of datasets with a shared fold
/// assignment and contrast fit. Errors in the shared stages are returned
/// directly; errors specific to one estimator are returned in its slot.
pub fn run_estimators(
    exp: &[ExperimentalSample],
    obs: &[ObservationalSample],
    learner: &ContrastLearner,
    settings: &EstimatorSettings,
    rng: &RngStream,
) -> Result<Vec<(EstimatorTag, Result<EstimateReport>)>> {
    check_dimensions(exp, obs).stage("validate_input")?;
    let folds = partition_folds(obs.len(), settings.k_folds, &mut rng.child(role::FOLDS))
        .stage("partition_folds")?;
    let contrast = fit_contrast_crossfit(obs, &folds, learner).stage("fit_contrast_crossfit")?;
    let wants = |t| settings.estimators.contains(&t);

    let mut out = Vec::new();
    if wants(EstimatorTag::TauBar) {
        out.push((
            EstimatorTag::TauBar,
            tau_bar_from_contrast(exp, obs, &folds, &contrast, &settings.psi, settings.alpha),
        ));
    }
    if wants(EstimatorTag::Aipsw) || wants(EstimatorTag::Collab) {
        let preds = build_baseline_inputs(exp, obs, &contrast, &settings.baseline, rng)
            .and_then(|inp| Ok((inp.predictions(exp, obs)?, inp)))
            .stage("build_baseline_inputs");
        match preds {
            Ok((p, inp)) => {
                if wants(EstimatorTag::Aipsw) {
                    out.push((EstimatorTag::Aipsw, estimate_aipsw(&p, Some(&inp), settings.alpha).stage("estimate_aipsw")));
                }
                if wants(EstimatorTag::Collab) {
                    out.push((EstimatorTag::Collab, estimate_collab(&p, Some(&inp), settings.alpha).stage("estimate_collab")));
                }
            }
            Err(e) => {
                let msg = e.root().to_string();
                for t in [EstimatorTag::Aipsw, EstimatorTag::Collab] {
                    if wants(t) {
                        out.push((t, Err(Error::NumericalRank(msg.clone()).at_stage("build_baseline_inputs"))));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Draws a dataset from the scenario DGP and hands it to [`run_estimators`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardEstimators;

impl StandardEstimators {
    fn run_all(config: &ScenarioConfig, rng: &RngStream) -> Result<Vec<(EstimatorTag, Result<EstimateReport>)>> {
        let pair: SimulatedPair = dgp::sample(&config.dgp, config.n, config.n_obs, rng).stage("sample")?;
        let learner = ContrastLearner::resolve(config.contrast_learner, Some(&config.dgp))?;
        run_estimators(&pair.exp, &pair.obs, &learner, &config.settings(), rng)
    }
}

impl ReplicationEstimator for StandardEstimators {
    fn run(&self, config: &ScenarioConfig, _rep: usize, rng: &RngStream) -> Vec<(EstimatorTag, Result<EstimateReport>)> {
        match Self::run_all(config, rng) {
            Ok(v) => v,
            Err(e) => {
                let stage = e.stage().unwrap_or("replication");
                let msg = e.root().to_string();
                config
                    .estimators
                    .iter()
                    .map(|&t| (t, Err(Error::NumericalRank(msg.clone()).at_stage(stage))))
                    .collect()
            }
        }
    }
}

/// One row of `scenario_<id>_reps.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub estimator: EstimatorTag,
    pub point: Option<f64>,
    pub variance: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub covered: Option<bool>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// `tau_bar` or `tau`.
    pub target: String,
    pub estimand: f64,
    pub successes: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    /// Population variance of the point estimates over replications.
    pub variance: f64,
    pub mse: f64,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_variance_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: String,
    pub config: ScenarioConfig,
    pub tau: f64,
    pub tau_bar: f64,
    pub estimators: BTreeMap<EstimatorTag, EstimatorSummary>,
    pub failed_replications: usize,
    pub unreliable: bool,
    #[serde(skip)]
    pub reps: Vec<RepRow>,
}

/// The estimand each estimator is compared to.
pub fn target_of(tag: EstimatorTag, oracle: &OracleEstimands) -> (&'static str, f64) {
    match tag {
        EstimatorTag::TauBar => ("tau_bar", oracle.tau_bar),
        EstimatorTag::Aipsw | EstimatorTag::Collab => ("tau", oracle.tau),
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    run_scenario_with(config, &StandardEstimators)
}

pub fn run_scenario_with(config: &ScenarioConfig, estimator: &dyn ReplicationEstimator) -> Result<ScenarioResult> {
    config.validate()?;
    let oracle = oracle_estimands(&config.dgp, &config.psi, &config.quadrature)?;
    let per_rep: Vec<Vec<(EstimatorTag, Result<EstimateReport>)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| estimator.run(config, rep, &config.replication_stream(rep)))
        .collect();
    Ok(aggregate(config, &oracle, per_rep))
}

fn aggregate(
    config: &ScenarioConfig,
    oracle: &OracleEstimands,
    per_rep: Vec<Vec<(EstimatorTag, Result<EstimateReport>)>>,
) -> ScenarioResult {
    let mut reps = Vec::new();
    let mut failed_replications = 0;
    for (rep, results) in per_rep.into_iter().enumerate() {
        let mut any_failed = false;
        for &tag in &config.estimators {
            let (_, estimand) = target_of(tag, oracle);
            let found = results.iter().find(|(t, _)| *t == tag).map(|(_, r)| r);
            match found {
                Some(Ok(r)) if r.point.is_finite() && r.variance.is_finite() => reps.push(RepRow {
                    rep,
                    estimator: tag,
                    point: Some(r.point),
                    variance: Some(r.variance),
                    ci_lo: Some(r.ci[0]),
                    ci_hi: Some(r.ci[1]),
                    covered: Some(r.covers(estimand)),
                    failed: false,
                }),
                _ => {
                    any_failed = true;
                    reps.push(RepRow {
                        rep,
                        estimator: tag,
                        point: None,
                        variance: None,
                        ci_lo: None,
                        ci_hi: None,
                        covered: None,
                        failed: true,
                    });
                }
            }
        }
        failed_replications += usize::from(any_failed);
    }

    let mut estimators = BTreeMap::new();
    for &tag in &config.estimators {
        let (target, estimand) = target_of(tag, oracle);
        let rows: Vec<&RepRow> = reps.iter().filter(|r| r.estimator == tag && !r.failed).collect();
        let failures = reps.iter().filter(|r| r.estimator == tag && r.failed).count();
        let m = rows.len() as f64;
        let (mean, variance, coverage, mean_width, mean_var) = if rows.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let pts: Vec<f64> = rows.iter().filter_map(|r| r.point).collect();
            let mean = pts.iter().sum::<f64>() / m;
            let var = pts.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / m;
            let cov = rows.iter().filter(|r| r.covered == Some(true)).count() as f64 / m;
            let width = rows.iter().map(|r| r.ci_hi.unwrap() - r.ci_lo.unwrap()).sum::<f64>() / m;
            let mv = rows.iter().filter_map(|r| r.variance).sum::<f64>() / m;
            (mean, var, cov, width, mv)
        };
        let bias = mean - estimand;
        estimators.insert(
            tag,
            EstimatorSummary {
                target: target.into(),
                estimand,
                successes: rows.len(),
                failures,
                mean,
                bias,
                variance,
                mse: bias * bias + variance,
                coverage,
                mean_width,
                mean_variance_estimate: mean_var,
            },
        );
    }
    ScenarioResult {
        id: config.id.clone(),
        config: config.clone(),
        tau: oracle.tau,
        tau_bar: oracle.tau_bar,
        estimators,
        failed_replications,
        unreliable: failed_replications as f64 > UNRELIABLE_FAILURE_SHARE * config.replications as f64,
        reps,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

pub fn write_reps_csv<W: Write>(writer: W, reps: &[RepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rep", "estimator", "point", "variance", "ci_lo", "ci_hi", "covered", "failed"])
        .map_err(std::io::Error::from)?;
    for r in reps {
        w.write_record([
            r.rep.to_string(),
            r.estimator.to_string(),
            opt(r.point),
            opt(r.variance),
            opt(r.ci_lo),
            opt(r.ci_hi),
            r.covered.map(|c| u8::from(c).to_string()).unwrap_or_default(),
            u8::from(r.failed).to_string(),
        ])
        .map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `scenario_<id>_reps.csv` and `scenario_<id>_summary.json` into
/// `dir`, returning both paths. `run_config`, when given, is embedded in the
/// summary under the key `run_config`.
pub fn write_scenario_outputs(
    result: &ScenarioResult,
    dir: &Path,
    run_config: Option<&serde_json::Value>,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let reps_path = dir.join(format!("scenario_{}_reps.csv", result.id));
    write_reps_csv(File::create(&reps_path)?, &result.reps)?;
    let summary_path = dir.join(format!("scenario_{}_summary.json", result.id));
    let mut doc = serde_json::to_value(result)?;
    if let (Some(cfg), Some(map)) = (run_config, doc.as_object_mut()) {
        map.insert("run_config".into(), cfg.clone());
    }
    let mut f = File::create(&summary_path)?;
    serde_json::to_writer_pretty(&mut f, &doc)?;
    writeln!(f)?;
    Ok((reps_path, summary_path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCell {
    /// Coverage in percent.
    pub coverage_pct: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub scenario: String,
    pub cells: BTreeMap<EstimatorTag, CoverageCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageTable {
    pub estimators: Vec<EstimatorTag>,
    pub rows: Vec<CoverageRow>,
}

pub fn coverage_table(results: &[ScenarioResult]) -> Result<CoverageTable> {
    if results.is_empty() {
        return Err(Error::invalid("coverage table needs at least one scenario"));
    }
    let mut estimators: Vec<EstimatorTag> = results
        .iter()
        .flat_map(|r| r.estimators.keys().copied())
        .collect();
    estimators.sort();
    estimators.dedup();
    let rows = results
        .iter()
        .map(|r| CoverageRow {
            scenario: r.id.clone(),
            cells: r
                .estimators
                .iter()
                .map(|(t, s)| {
                    (
                        *t,
                        CoverageCell {
                            coverage_pct: 100.0 * s.coverage,
                            mean_width: s.mean_width,
                        },
                    )
                })
                .collect(),
        })
        .collect();
    Ok(CoverageTable { estimators, rows })
}

impl CoverageTable {
    /// Columns `scenario, <est>_coverage_pct, <est>_mean_width, ...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["scenario".to_string()];
        for t in &self.estimators {
            header.push(format!("{t}_coverage_pct"));
            header.push(format!("{t}_mean_width"));
        }
        w.write_record(&header).map_err(std::io::Error::from)?;
        for row in &self.rows {
            let mut rec = vec![row.scenario.clone()];
            for t in &self.estimators {
                match row.cells.get(t) {
                    Some(c) => {
                        rec.push(format!("{:.4}", c.coverage_pct));
                        rec.push(format!("{:.6}", c.mean_width));
                    }
                    None => {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                }
            }
            w.write_record(&rec).map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}
