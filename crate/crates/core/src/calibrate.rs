//! The calibrated outcome-regression estimator of the projected effect:
//! OLS of the experimental effect measurements on a basis of the estimated
//! contrast, averaged over the observational covariates with out-of-fold
//! contrasts, plus its plug-in variance and Wald interval.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::basis::BasisExpansion;
use crate::data::{check_dimensions, ExperimentalSample, ObservationalSample};
use crate::error::{Error, Result, StageExt};
use crate::folds::{partition_folds, FoldAssignment};
use crate::normal;
use crate::nuisance::{fit_contrast_crossfit, ContrastFit, ContrastLearner};
use crate::rng::{role, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    TauBar,
    Aipsw,
    Collab,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 3] = [Self::TauBar, Self::Aipsw, Self::Collab];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TauBar => "tau_bar",
            Self::Aipsw => "aipsw",
            Self::Collab => "collab",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tau_bar" => Ok(Self::TauBar),
            "aipsw" => Ok(Self::Aipsw),
            "collab" => Ok(Self::Collab),
            other => Err(Error::Config(format!(
                "unknown estimator {other:?}; expected tau_bar, aipsw or collab"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorTag,
    pub point: f64,
    pub variance: f64,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub n: usize,
    pub n_obs: usize,
    pub k_folds: usize,
    pub diagnostics: BTreeMap<String, Value>,
}

impl EstimateReport {
    pub fn new(
        estimator: EstimatorTag,
        point: f64,
        variance: f64,
        alpha: f64,
        n: usize,
        n_obs: usize,
        k_folds: usize,
    ) -> Result<Self> {
        let (lo, hi) = confidence_interval(point, variance, alpha)?;
        Ok(Self {
            estimator,
            point,
            variance,
            ci: [lo, hi],
            alpha,
            n,
            n_obs,
            k_folds,
            diagnostics: BTreeMap::new(),
        })
    }

    pub fn with_diagnostic(mut self, key: &str, value: Value) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci[0] <= target && target <= self.ci[1]
    }

    pub fn width(&self) -> f64 {
        self.ci[1] - self.ci[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub beta_hat: Vec<f64>,
    /// `n^{-1} sum psi psi'` over the experimental rows, row-major.
    pub gram: Vec<Vec<f64>>,
    /// `(D_i - mu_bar_hat(X_i)) psi(Delta_hat(X_i))`.
    pub residual_vectors: Vec<Vec<f64>>,
    /// `G^{-1}` times the observational mean of the out-of-fold basis.
    pub a_hat: Vec<f64>,
    pub condition: f64,
    /// Fitted values `mu_bar_hat(X_i)` on the experimental rows.
    pub fitted: Vec<f64>,
}

/// OLS calibration from arrays: `d` and `exp_delta` over the experimental
/// rows, `obs_oof_delta` the out-of-fold contrasts over the observational
/// rows.
pub fn calibrate_arrays(
    d: &[f64],
    exp_delta: &[f64],
    obs_oof_delta: &[f64],
    psi: &BasisExpansion,
) -> Result<CalibrationFit> {
    let n = d.len();
    let p = psi.dim();
    if exp_delta.len() != n {
        return Err(Error::DimensionMismatch {
            context: "experimental contrast predictions".into(),
            expected: n,
            found: exp_delta.len(),
        });
    }
    if n < p {
        return Err(Error::InsufficientData { n, p });
    }
    if obs_oof_delta.is_empty() {
        return Err(Error::invalid("no observational rows"));
    }
    let basis: Vec<Vec<f64>> = exp_delta.iter().map(|&t| psi.eval(t)).collect();
    let nf = n as f64;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross = DVector::<f64>::zeros(p);
    for (b, &di) in basis.iter().zip(d) {
        for r in 0..p {
            cross[r] += di * b[r] / nf;
            for c in 0..p {
                gram[(r, c)] += b[r] * b[c] / nf;
            }
        }
    }
    let (beta, condition) = crate::linalg::solve_gram(&gram, &cross)?;
    let beta_hat: Vec<f64> = beta.iter().copied().collect();

    let fitted: Vec<f64> = basis.iter().map(|b| dot(b, &beta_hat)).collect();
    let residual_vectors = basis
        .iter()
        .zip(d.iter().zip(&fitted))
        .map(|(b, (di, f))| b.iter().map(|v| (di - f) * v).collect())
        .collect();

    let nn = obs_oof_delta.len() as f64;
    let mut obs_mean = DVector::<f64>::zeros(p);
    for &t in obs_oof_delta {
        for (o, v) in obs_mean.iter_mut().zip(psi.eval(t)) {
            *o += v / nn;
        }
    }
    let (a, _) = crate::linalg::solve_gram(&gram, &obs_mean)?;

    Ok(CalibrationFit {
        beta_hat,
        gram: (0..p).map(|r| (0..p).map(|c| gram[(r, c)]).collect()).collect(),
        residual_vectors,
        a_hat: a.iter().copied().collect(),
        condition,
        fitted,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Calibrates with the averaged contrast on the experimental rows and the
/// out-of-fold contrasts on the observational rows.
pub fn calibrate_ols(
    exp: &[ExperimentalSample],
    obs: &[ObservationalSample],
    folds: &FoldAssignment,
    contrast: &ContrastFit,
    psi: &BasisExpansion,
) -> Result<CalibrationFit> {
    if exp.len() < psi.dim() {
        return Err(Error::InsufficientData {
            n: exp.len(),
            p: psi.dim(),
        });
    }
    let d: Vec<f64> = exp.iter().map(|r| r.d).collect();
    let exp_delta: Vec<f64> = exp.iter().map(|r| contrast.averaged(&r.x)).collect();
    let oof = contrast.out_of_fold(obs, folds)?;
    calibrate_arrays(&d, &exp_delta, &oof, psi)
}

/// `beta_hat' psi(Delta^{(-k)}(X_i))` for every observational row.
pub fn out_of_fold_predictions(fit: &CalibrationFit, obs_oof_delta: &[f64], psi: &BasisExpansion) -> Vec<f64> {
    obs_oof_delta
        .iter()
        .map(|&t| dot(&fit.beta_hat, &psi.eval(t)))
        .collect()
}

pub fn estimate_tau_bar(predictions: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("no observational predictions"));
    }
    Ok(predictions.iter().sum::<f64>() / predictions.len() as f64)
}

/// The two terms of the plug-in variance: the calibration term
/// `a' (n^{-2} sum r r') a` and the averaging term
/// `N^{-2} sum (mu_bar^{(-k)}(X_i) - tau_bar_hat)^2`.
pub fn variance_terms(fit: &CalibrationFit, obs_predictions: &[f64], tau_bar_hat: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let first = fit
        .residual_vectors
        .iter()
        .map(|r| dot(&fit.a_hat, r).powi(2))
        .sum::<f64>()
        / (nf * nf);
    let nn = obs_predictions.len() as f64;
    let second = obs_predictions
        .iter()
        .map(|m| (m - tau_bar_hat).powi(2))
        .sum::<f64>()
        / (nn * nn);
    (first, second)
}

pub fn variance_tau_bar(
    fit: &CalibrationFit,
    obs_predictions: &[f64],
    tau_bar_hat: f64,
    n: usize,
    n_obs: usize,
) -> Result<f64> {
    if obs_predictions.len() != n_obs {
        return Err(Error::DimensionMismatch {
            context: "observational predictions".into(),
            expected: n_obs,
            found: obs_predictions.len(),
        });
    }
    if n < fit.beta_hat.len() || fit.residual_vectors.len() != n {
        return Err(Error::InsufficientData {
            n,
            p: fit.beta_hat.len(),
        });
    }
    let (a, b) = variance_terms(fit, obs_predictions, tau_bar_hat, n);
    Ok(a + b)
}

/// `point -/+ z_{1-alpha/2} sqrt(variance)`.
pub fn confidence_interval(point: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) {
        return Err(Error::invalid(format!("variance must be nonnegative, got {variance}")));
    }
    let z = normal::two_sided_critical(alpha)?;
    let half = z * variance.sqrt();
    Ok((point - half, point + half))
}

/// Excess kurtosis of the calibration residuals, a diagnostic for heavy tails.
fn residual_kurtosis(d: &[f64], fitted: &[f64]) -> f64 {
    let n = d.len() as f64;
    let r: Vec<f64> = d.iter().zip(fitted).map(|(a, b)| a - b).collect();
    let m = r.iter().sum::<f64>() / n;
    let m2 = r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = r.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

/// Steps 3 to 5 given folds and a fitted contrast.
pub fn tau_bar_from_contrast(
    exp: &[ExperimentalSample],
    obs: &[ObservationalSample],
    folds: &FoldAssignment,
    contrast: &ContrastFit,
    psi: &BasisExpansion,
    alpha: f64,
) -> Result<EstimateReport> {
    let fit = calibrate_ols(exp, obs, folds, contrast, psi).stage("calibrate_ols")?;
    let oof = contrast.out_of_fold(obs, folds).stage("estimate_tau_bar")?;
    let preds = out_of_fold_predictions(&fit, &oof, psi);
    let point = estimate_tau_bar(&preds).stage("estimate_tau_bar")?;
    let (first, second) = variance_terms(&fit, &preds, point, exp.len());
    let variance = first + second;
    let d: Vec<f64> = exp.iter().map(|r| r.d).collect();
    let report = EstimateReport::new(
        EstimatorTag::TauBar,
        point,
        variance,
        alpha,
        exp.len(),
        obs.len(),
        folds.k(),
    )
    .stage("confidence_interval")?;
    Ok(report
        .with_diagnostic("condition_number", json!(fit.condition))
        .with_diagnostic("beta_hat", json!(fit.beta_hat))
        .with_diagnostic("variance_calibration_term", json!(first))
        .with_diagnostic("variance_averaging_term", json!(second))
        .with_diagnostic("residual_excess_kurtosis", json!(residual_kurtosis(&d, &fit.fitted)))
        .with_diagnostic("contrast_learner", json!(contrast.learner_tag()))
        .with_diagnostic("basis", json!(psi.to_string())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauBarConfig {
    pub k_folds: usize,
    pub psi: BasisExpansion,
    pub learner: ContrastLearner,
    pub alpha: f64,
}

/// Folds, cross-fit contrast, calibration, averaging, variance and interval.
/// Fold randomness comes from the `FOLDS` child of `rng`.
pub fn run_tau_bar_pipeline(
    exp: &[ExperimentalSample],
    obs: &[ObservationalSample],
    config: &TauBarConfig,
    rng: &RngStream,
) -> Result<EstimateReport> {
    check_dimensions(exp, obs).stage("validate_input")?;
    if exp.len() < config.psi.dim() {
        return Err(Error::InsufficientData {
            n: exp.len(),
            p: config.psi.dim(),
        }
        .at_stage("calibrate_ols"));
    }
    let folds = partition_folds(obs.len(), config.k_folds, &mut rng.child(role::FOLDS))
        .stage("partition_folds")?;
    let contrast =
        fit_contrast_crossfit(obs, &folds, &config.learner).stage("fit_contrast_crossfit")?;
    tau_bar_from_contrast(exp, obs, &folds, &contrast, &config.psi, config.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_normal_equations() {
        let fit = calibrate_arrays(&[1.0, 2.0, 4.0], &[0.0, 1.0, 2.0], &[0.5], &BasisExpansion::linear()).unwrap();
        assert!((fit.beta_hat[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((fit.beta_hat[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_response() {
        let delta = [0.1, 0.7, -1.2, 2.0];
        let fit = calibrate_arrays(&[3.0; 4], &delta, &[0.0, 1.0], &BasisExpansion::linear()).unwrap();
        assert!((fit.beta_hat[0] - 3.0).abs() < 1e-8 && fit.beta_hat[1].abs() < 1e-8);
    }

    #[test]
    fn exact_linear_signal() {
        let delta = [0.1, 0.7, -1.2, 2.0, 0.4];
        let d: Vec<f64> = delta.iter().map(|t| 2.0 + 3.0 * t).collect();
        let fit = calibrate_arrays(&d, &delta, &[0.0, 1.0], &BasisExpansion::linear()).unwrap();
        assert!((fit.beta_hat[0] - 2.0).abs() < 1e-10 && (fit.beta_hat[1] - 3.0).abs() < 1e-10);
        assert!(fit.residual_vectors.iter().flatten().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn constant_contrast_is_collinear() {
        let r = calibrate_arrays(&[1.0, 2.0, 3.0], &[0.5; 3], &[0.5], &BasisExpansion::linear());
        assert!(matches!(r, Err(Error::Collinearity { .. })));
    }

    #[test]
    fn too_few_rows() {
        let r = calibrate_arrays(&[1.0], &[0.5], &[0.5], &BasisExpansion::linear());
        assert!(matches!(r, Err(Error::InsufficientData { n: 1, p: 2 })));
    }

    #[test]
    fn variance_examples() {
        let fit = calibrate_arrays(&[2.0, 5.0], &[0.0, 1.0], &[0.0], &BasisExpansion::linear()).unwrap();
        assert!(fit.residual_vectors.iter().flatten().all(|v| v.abs() < 1e-12));
        assert_eq!(variance_tau_bar(&fit, &[1.0, 1.0], 1.0, 2, 2).unwrap(), 0.0);
        assert!((variance_tau_bar(&fit, &[0.0, 2.0], 1.0, 2, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(1.0, 0.0, 0.05).unwrap(), (1.0, 1.0));
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.05).unwrap();
        assert!((hi - 1.959964).abs() < 1e-5 && (lo + 1.959964).abs() < 1e-5);
        let (lo, hi) = confidence_interval(2.0, 0.25, 0.32).unwrap();
        assert!((hi - 2.0 - 0.5 * 0.994_457_883).abs() < 1e-6);
        assert!((2.0 - lo - 0.5 * 0.994_457_883).abs() < 1e-6);
        assert!(confidence_interval(0.0, -1.0, 0.05).is_err());
    }

    #[test]
    fn estimator_tags() {
        assert_eq!("collab".parse::<EstimatorTag>().unwrap(), EstimatorTag::Collab);
        assert_eq!(serde_json::to_string(&EstimatorTag::TauBar).unwrap(), "\"tau_bar\"");
        assert!("ols".parse::<EstimatorTag>().is_err());
    }
}
