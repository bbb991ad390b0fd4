//! Comparison estimators of the transported ATE: AIPSW and the
//! collaborative estimator, with influence-function variances.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calibrate::{EstimateReport, EstimatorTag};
use crate::data::{ExperimentalSample, ObservationalSample};
use crate::error::{Error, Result};
use crate::linalg::Penalty;
use crate::nuisance::{
    fit_cate, fit_odds, fit_smoother, CateFit, ContrastFit, FeatureMap, OddsFit, SmootherFit,
    DEFAULT_PROB_CLIP,
};
use crate::rng::{role, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub q_features: FeatureMap,
    pub prob_clip: f64,
    /// Cross-fitting folds for the CATE predictions on the experimental rows.
    pub folds_exp: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            q_features: FeatureMap::Linear,
            prob_clip: DEFAULT_PROB_CLIP,
            folds_exp: 5,
        }
    }
}

/// Fitted nuisances shared by both baselines.
#[derive(Debug, Clone)]
pub struct BaselineInputs {
    pub mu_hat: CateFit,
    /// Odds of the observational dataset given the covariates.
    pub q_hat: OddsFit,
    /// Odds of the observational dataset given the scalar CATE estimate.
    pub g_hat: OddsFit,
    /// Smoother of the CATE estimate on `ln g_hat`.
    pub k_hat: SmootherFit,
}

/// Nuisance values at every row.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BaselinePredictions {
    pub d: Vec<f64>,
    pub mu_exp: Vec<f64>,
    pub q_exp: Vec<f64>,
    pub g_exp: Vec<f64>,
    pub k_exp: Vec<f64>,
    pub mu_obs: Vec<f64>,
    pub q_obs: Vec<f64>,
    pub k_obs: Vec<f64>,
    pub clip_count: usize,
}

impl BaselineInputs {
    /// Evaluates the nuisances. CATE values on the experimental rows are the
    /// stored (cross-fit) predictions; on the observational rows the full fit.
    pub fn predictions(&self, exp: &[ExperimentalSample], obs: &[ObservationalSample]) -> Result<BaselinePredictions> {
        let mu_exp = self.mu_hat.exp_predictions().to_vec();
        if mu_exp.len() != exp.len() {
            return Err(Error::DimensionMismatch {
                context: "CATE predictions on experimental rows".into(),
                expected: exp.len(),
                found: mu_exp.len(),
            });
        }
        let mu_obs: Vec<f64> = obs.iter().map(|r| self.mu_hat.predict(&r.x)).collect();
        let mut clip_count = 0;
        let mut odds = |fit: &OddsFit, f: &[f64]| {
            let (p, clipped) = fit.prob_experimental_clipped(f);
            clip_count += usize::from(clipped);
            (1.0 - p) / p
        };
        let q_exp: Vec<f64> = exp.iter().map(|r| odds(&self.q_hat, &r.x)).collect();
        let q_obs: Vec<f64> = obs.iter().map(|r| odds(&self.q_hat, &r.x)).collect();
        let g_exp: Vec<f64> = mu_exp.iter().map(|&m| odds(&self.g_hat, &[m])).collect();
        let g_obs: Vec<f64> = mu_obs.iter().map(|&m| odds(&self.g_hat, &[m])).collect();
        let k_exp = g_exp.iter().map(|g| self.k_hat.predict(g.ln())).collect();
        let k_obs = g_obs.iter().map(|g| self.k_hat.predict(g.ln())).collect();
        Ok(BaselinePredictions {
            d: exp.iter().map(|r| r.d).collect(),
            mu_exp,
            q_exp,
            g_exp,
            k_exp,
            mu_obs,
            q_obs,
            k_obs,
            clip_count,
        })
    }
}

/// Fits the CATE with the contrast as a prognostic feature, the covariate
/// odds, the CATE odds on the combined sample, and the smoother.
pub fn build_baseline_inputs(
    exp: &[ExperimentalSample],
    obs: &[ObservationalSample],
    contrast: &ContrastFit,
    config: &BaselineConfig,
    rng: &RngStream,
) -> Result<BaselineInputs> {
    if exp.is_empty() || obs.is_empty() {
        return Err(Error::invalid("baselines need both datasets"));
    }
    let mu_hat = fit_cate(exp, contrast, config.folds_exp, Penalty::Gcv, &mut rng.child(role::CATE_FOLDS))?;
    let labels: Vec<bool> = exp.iter().map(|_| true).chain(obs.iter().map(|_| false)).collect();
    let x: Vec<Vec<f64>> = exp
        .iter()
        .map(|r| r.x.clone())
        .chain(obs.iter().map(|r| r.x.clone()))
        .collect();
    let q_hat = fit_odds(&x, &labels, config.prob_clip, config.q_features)?;

    let mu_all: Vec<f64> = mu_hat
        .exp_predictions()
        .iter()
        .copied()
        .chain(obs.iter().map(|r| mu_hat.predict(&r.x)))
        .collect();
    let mu_feat: Vec<Vec<f64>> = mu_all.iter().map(|&m| vec![m]).collect();
    let g_hat = fit_odds(&mu_feat, &labels, config.prob_clip, FeatureMap::Linear)?;
    let log_g: Vec<f64> = mu_all.iter().map(|&m| g_hat.odds(&[m]).ln()).collect();
    let k_hat = fit_smoother(&log_g, &mu_all)?;
    Ok(BaselineInputs {
        mu_hat,
        q_hat,
        g_hat,
        k_hat,
    })
}

fn check_lengths(pairs: &[(&str, usize)], expected: usize) -> Result<()> {
    for (name, len) in pairs {
        if *len != expected {
            return Err(Error::DimensionMismatch {
                context: (*name).into(),
                expected,
                found: *len,
            });
        }
    }
    Ok(())
}

/// AIPSW point and variance from nuisance arrays. Returns `(point, variance)`.
pub fn aipsw_arrays(d: &[f64], mu_exp: &[f64], q_exp: &[f64], mu_obs: &[f64]) -> Result<(f64, f64)> {
    check_lengths(&[("mu_exp", mu_exp.len()), ("q_exp", q_exp.len())], d.len())?;
    if d.is_empty() || mu_obs.is_empty() {
        return Err(Error::invalid("AIPSW needs both datasets"));
    }
    let nn = mu_obs.len() as f64;
    let correction: Vec<f64> = d.iter().zip(mu_exp).zip(q_exp).map(|((di, m), q)| (di - m) * q).collect();
    let point = correction.iter().sum::<f64>() / nn + mu_obs.iter().sum::<f64>() / nn;
    let variance = (correction.iter().map(|c| c * c).sum::<f64>()
        + mu_obs.iter().map(|m| (m - point).powi(2)).sum::<f64>())
        / (nn * nn);
    Ok((point, variance))
}

/// Collaborative point and variance from nuisance arrays.
#[allow(clippy::too_many_arguments)]
pub fn collab_arrays(
    d: &[f64],
    mu_exp: &[f64],
    q_exp: &[f64],
    g_exp: &[f64],
    k_exp: &[f64],
    mu_obs: &[f64],
    q_obs: &[f64],
    k_obs: &[f64],
) -> Result<(f64, f64)> {
    check_lengths(
        &[
            ("mu_exp", mu_exp.len()),
            ("q_exp", q_exp.len()),
            ("g_exp", g_exp.len()),
            ("k_exp", k_exp.len()),
        ],
        d.len(),
    )?;
    check_lengths(&[("q_obs", q_obs.len()), ("k_obs", k_obs.len())], mu_obs.len())?;
    if d.is_empty() || mu_obs.is_empty() {
        return Err(Error::invalid("collaborative estimator needs both datasets"));
    }
    let nn = mu_obs.len() as f64;
    let exp_terms: Vec<f64> = (0..d.len())
        .map(|i| {
            (d[i] - mu_exp[i]) * g_exp[i] + q_exp[i] / (1.0 + q_exp[i]) * (mu_exp[i] - k_exp[i])
        })
        .collect();
    let obs_terms: Vec<f64> = (0..mu_obs.len())
        .map(|i| (q_obs[i] * mu_obs[i] + k_obs[i]) / (1.0 + q_obs[i]))
        .collect();
    let point = exp_terms.iter().sum::<f64>() / nn + obs_terms.iter().sum::<f64>() / nn;
    let variance = (exp_terms.iter().map(|t| t * t).sum::<f64>()
        + obs_terms.iter().map(|t| (t - point).powi(2)).sum::<f64>())
        / (nn * nn);
    Ok((point, variance))
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn estimate_aipsw(
    preds: &BaselinePredictions,
    inputs: Option<&BaselineInputs>,
    alpha: f64,
) -> Result<EstimateReport> {
    let (point, variance) = aipsw_arrays(&preds.d, &preds.mu_exp, &preds.q_exp, &preds.mu_obs)?;
    let mut report = EstimateReport::new(
        EstimatorTag::Aipsw,
        point,
        variance,
        alpha,
        preds.d.len(),
        preds.mu_obs.len(),
        1,
    )?
    .with_diagnostic("max_odds", json!(max_of(&preds.q_exp)))
    .with_diagnostic("clip_count", json!(preds.clip_count));
    if let Some(inp) = inputs {
        report = report
            .with_diagnostic("separation_flag", json!(inp.q_hat.separation))
            .with_diagnostic("odds_converged", json!(inp.q_hat.converged))
            .with_diagnostic("cate_penalty", json!(inp.mu_hat.lambda()));
    }
    Ok(report)
}

pub fn estimate_collab(
    preds: &BaselinePredictions,
    inputs: Option<&BaselineInputs>,
    alpha: f64,
) -> Result<EstimateReport> {
    let (point, variance) = collab_arrays(
        &preds.d,
        &preds.mu_exp,
        &preds.q_exp,
        &preds.g_exp,
        &preds.k_exp,
        &preds.mu_obs,
        &preds.q_obs,
        &preds.k_obs,
    )?;
    let mut report = EstimateReport::new(
        EstimatorTag::Collab,
        point,
        variance,
        alpha,
        preds.d.len(),
        preds.mu_obs.len(),
        1,
    )?
    .with_diagnostic("max_odds", json!(max_of(&preds.g_exp)))
    .with_diagnostic("clip_count", json!(preds.clip_count));
    if let Some(inp) = inputs {
        report = report
            .with_diagnostic(
                "separation_flag",
                json!(inp.q_hat.separation || inp.g_hat.separation),
            )
            .with_diagnostic("smoother_degenerate", json!(inp.k_hat.degenerate))
            .with_diagnostic(
                "variance_cate_on_experimental_rows",
                json!(if inp.mu_hat.cross_fit { "cross_fit" } else { "in_sample" }),
            );
    }
    Ok(report)
}
