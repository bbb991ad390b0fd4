//! Univariate kernel smoother with Silverman's bandwidth.

use super::kernel::{silverman_bandwidth, NadarayaWatson};
use crate::error::{Error, Result};

pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone)]
pub struct SmootherFit {
    kernel: Option<NadarayaWatson>,
    mean: f64,
    /// All inputs were identical; predictions are the mean response.
    pub degenerate: bool,
}

impl SmootherFit {
    pub fn predict(&self, u: f64) -> f64 {
        match &self.kernel {
            Some(k) => k.predict(u),
            None => self.mean,
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.kernel.as_ref().map(|k| k.bandwidth())
    }
}

pub fn fit_smoother(u: &[f64], v: &[f64]) -> Result<SmootherFit> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "smoother inputs".into(),
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.len() < MIN_PAIRS {
        return Err(Error::invalid(format!(
            "smoother needs at least {MIN_PAIRS} pairs, got {}",
            u.len()
        )));
    }
    if u.iter().chain(v).any(|a| !a.is_finite()) {
        return Err(Error::invalid("smoother inputs must be finite"));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let h = silverman_bandwidth(u);
    if !(h > 0.0) {
        return Ok(SmootherFit {
            kernel: None,
            mean,
            degenerate: true,
        });
    }
    Ok(SmootherFit {
        kernel: Some(NadarayaWatson::fit(u, v, h)?),
        mean,
        degenerate: false,
    })
}
