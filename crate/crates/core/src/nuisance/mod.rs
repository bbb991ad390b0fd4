//! Nuisance learners: the observational contrast, the CATE, sampling odds
//! and a univariate smoother.

mod cate;
mod contrast;
mod kernel;
mod odds;
mod smoother;

use std::fmt;

pub use cate::{fit_cate, CateFit};
pub use contrast::{
    fit_contrast_crossfit, poly_features, ContrastFit, ContrastLearner, ContrastLearnerKind,
};
pub use kernel::{silverman_bandwidth, NadarayaWatson};
pub use odds::{fit_odds, FeatureMap, OddsFit, DEFAULT_PROB_CLIP};
pub use smoother::{fit_smoother, SmootherFit};

/// A fitted real-valued function of the covariates.
pub trait Regressor: Send + Sync + fmt::Debug {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Adapts a closure to [`Regressor`].
pub struct FnRegressor<F>(pub F);

impl<F> fmt::Debug for FnRegressor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnRegressor")
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Regressor for FnRegressor<F> {
    fn predict(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}
