//! CATE learner using the estimated contrast as a prognostic feature.

use std::sync::Arc;

use super::{ContrastFit, Regressor};
use crate::data::ExperimentalSample;
use crate::error::{Error, Result};
use crate::folds::partition_folds;
use crate::linalg::{ridge_fit, Penalty, RidgeModel};
use crate::rng::RngStream;

/// Ridge regression of `D` on `(x, Delta_hat(x))`.
#[derive(Debug, Clone)]
pub struct CateFit {
    model: RidgeModel,
    contrast: Arc<dyn Regressor>,
    /// Predictions at the experimental rows; cross-fit when `cross_fit`.
    exp_predictions: Vec<f64>,
    pub cross_fit: bool,
    pub learner_tag: String,
}

fn features(x: &[f64], contrast: &dyn Regressor) -> Vec<f64> {
    let mut f = x.to_vec();
    f.push(contrast.predict(x));
    f
}

impl CateFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict(&features(x, self.contrast.as_ref()))
    }

    pub fn exp_predictions(&self) -> &[f64] {
        &self.exp_predictions
    }

    pub fn lambda(&self) -> f64 {
        self.model.lambda()
    }
}

/// Fits the CATE on all experimental rows. When `folds_exp > 1` the
/// predictions stored for the experimental rows come from models that did
/// not see them.
pub fn fit_cate(
    exp: &[ExperimentalSample],
    contrast: &ContrastFit,
    folds_exp: usize,
    penalty: Penalty,
    rng: &mut RngStream,
) -> Result<CateFit> {
    fit_cate_with(exp, contrast.averaged_regressor(), folds_exp, penalty, rng)
}

pub(crate) fn fit_cate_with(
    exp: &[ExperimentalSample],
    contrast: Arc<dyn Regressor>,
    folds_exp: usize,
    penalty: Penalty,
    rng: &mut RngStream,
) -> Result<CateFit> {
    if exp.is_empty() {
        return Err(Error::invalid("CATE learner needs experimental rows"));
    }
    if folds_exp == 0 {
        return Err(Error::invalid("folds_exp must be positive"));
    }
    let x: Vec<Vec<f64>> = exp.iter().map(|r| features(&r.x, contrast.as_ref())).collect();
    let d: Vec<f64> = exp.iter().map(|r| r.d).collect();
    let model = ridge_fit(&x, &d, penalty)?;
    let cross_fit = folds_exp > 1 && exp.len() >= 2 * folds_exp;
    let exp_predictions = if cross_fit {
        let folds = partition_folds(exp.len(), folds_exp, rng)?;
        let mut out = vec![0.0; exp.len()];
        for k in 0..folds_exp {
            let train = folds.complement(k);
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let dt: Vec<f64> = train.iter().map(|&i| d[i]).collect();
            let m = ridge_fit(&xt, &dt, penalty)?;
            for i in folds.members(k) {
                out[i] = m.predict(&x[i]);
            }
        }
        out
    } else {
        x.iter().map(|f| model.predict(f)).collect()
    };
    if exp_predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalRank("non-finite CATE predictions".into()));
    }
    Ok(CateFit {
        model,
        contrast,
        exp_predictions,
        cross_fit,
        learner_tag: "ridge_prognostic".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::sample_multivariate;
    use crate::folds::FoldAssignment;
    use crate::nuisance::{fit_contrast_crossfit, ContrastLearner};
    use crate::oracle::DgpSpec;

    fn oracle_fit(dgp: &DgpSpec, obs: &[crate::data::ObservationalSample]) -> ContrastFit {
        fit_contrast_crossfit(obs, &FoldAssignment::single(obs.len()), &ContrastLearner::Oracle(Box::new(dgp.clone())))
            .unwrap()
    }

    #[test]
    fn constant_response() {
        let dgp = DgpSpec::univariate(0.2).unwrap();
        let pair = crate::dgp::sample(&dgp, 30, 10, &RngStream::new(1, 0)).unwrap();
        let exp: Vec<ExperimentalSample> = pair.exp.iter().map(|r| ExperimentalSample::new(2.0, r.x.clone())).collect();
        let fit = fit_cate(&exp, &oracle_fit(&dgp, &pair.obs), 5, Penalty::Gcv, &mut RngStream::new(1, 1)).unwrap();
        for x in [-3.0, 0.0, 2.0] {
            assert!((fit.predict(&[x]) - 2.0).abs() < 1e-8);
        }
        assert!(fit.exp_predictions().iter().all(|p| (p - 2.0).abs() < 1e-8));
    }

    #[test]
    fn exact_contrast_signal() {
        let dgp = DgpSpec::univariate(0.2).unwrap();
        let pair = crate::dgp::sample(&dgp, 40, 10, &RngStream::new(2, 0)).unwrap();
        let exp: Vec<ExperimentalSample> =
            pair.exp.iter().map(|r| ExperimentalSample::new(dgp.delta(&r.x), r.x.clone())).collect();
        let fit = fit_cate(&exp, &oracle_fit(&dgp, &pair.obs), 1, Penalty::Fixed(1e-8), &mut RngStream::new(2, 1)).unwrap();
        for r in &exp {
            assert!((fit.predict(&r.x) - r.d).abs() < 1e-6);
        }
    }

    #[test]
    fn heavy_penalty_tends_to_mean() {
        let dgp = DgpSpec::univariate(0.2).unwrap();
        let pair = crate::dgp::sample(&dgp, 40, 10, &RngStream::new(3, 0)).unwrap();
        let fit = fit_cate(&pair.exp, &oracle_fit(&dgp, &pair.obs), 1, Penalty::Fixed(1e8), &mut RngStream::new(3, 1)).unwrap();
        let mean = pair.exp.iter().map(|r| r.d).sum::<f64>() / 40.0;
        assert!((fit.predict(&[0.3]) - mean).abs() < 1e-4);
    }

    #[test]
    fn well_specified_multivariate_mean() {
        let dgp = DgpSpec::multivariate(0.0, 1.0).unwrap();
        let pair = sample_multivariate(0.0, 1.0, 100, 10_000, &RngStream::new(4, 0)).unwrap();
        let fit = fit_cate(&pair.exp, &oracle_fit(&dgp, &pair.obs), 5, Penalty::Gcv, &mut RngStream::new(4, 1)).unwrap();
        let m = pair.obs.iter().map(|r| fit.predict(&r.x)).sum::<f64>() / pair.obs.len() as f64;
        assert!((m - 0.678).abs() < 0.15, "{m}");
        assert!(fit.cross_fit);
    }
}
