//! Closed-form description of the simulation data-generating processes.

use serde::{Deserialize, Serialize};

use super::quadrature::GaussianLaw;
use crate::error::{Error, Result};
use crate::normal;

/// Covariate dimension of the multivariate family.
pub const MULTIVARIATE_DIM: usize = 10;
/// Mean of every experimental covariate in the multivariate family.
pub const MULTIVARIATE_RCT_MEAN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DgpFamily {
    /// One covariate; experimental `X ~ N(-theta, 1-theta)`, observational
    /// `X ~ N(0,1)`, contrast `0.75x^2 + 3x + 1`, effect `contrast - x`,
    /// fair-coin observational treatment.
    Univariate { theta: f64 },
    /// Ten covariates; experimental `N(0.5, 1)`, observational
    /// `N(0, sigma0_sq)`, contrast `expit(0.5 x1) expit(1 - 0.5 x2)`,
    /// effect `0.5 + 0.5 contrast + eta (x1+1)(x2+1)`.
    Multivariate { eta: f64, sigma0_sq: f64 },
    /// Covariate laws and contrast of `Univariate`, but a
    /// constant effect.
    ConstantEffect { theta: f64, effect: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub family: DgpFamily,
    /// Standard deviation of the experimental effect-measurement noise.
    pub sigma_d: f64,
    /// Standard deviation of the observational outcome noise.
    pub sigma_y: f64,
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta must lie in [0, 1), got {theta}")));
    }
    Ok(())
}

impl DgpSpec {
    pub fn univariate(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self {
            family: DgpFamily::Univariate { theta },
            sigma_d: 1.0,
            sigma_y: 1.0,
        })
    }

    pub fn multivariate(eta: f64, sigma0_sq: f64) -> Result<Self> {
        if !(sigma0_sq > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!(
                "multivariate family needs finite eta and sigma0_sq > 0, got ({eta}, {sigma0_sq})"
            )));
        }
        Ok(Self {
            family: DgpFamily::Multivariate { eta, sigma0_sq },
            sigma_d: 1.0,
            sigma_y: 1.0,
        })
    }

    pub fn constant_effect(theta: f64, effect: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self {
            family: DgpFamily::ConstantEffect { theta, effect },
            sigma_d: 1.0,
            sigma_y: 1.0,
        })
    }

    pub fn with_noise(mut self, sigma_d: f64, sigma_y: f64) -> Result<Self> {
        if !(sigma_d >= 0.0 && sigma_y >= 0.0) {
            return Err(Error::invalid("noise scales must be nonnegative"));
        }
        self.sigma_d = sigma_d;
        self.sigma_y = sigma_y;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            DgpFamily::Univariate { theta } | DgpFamily::ConstantEffect { theta, .. } => {
                check_theta(theta)?
            }
            DgpFamily::Multivariate { eta, sigma0_sq } => {
                Self::multivariate(eta, sigma0_sq)?;
            }
        }
        if !(self.sigma_d >= 0.0 && self.sigma_y >= 0.0) {
            return Err(Error::invalid("noise scales must be nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.family {
            DgpFamily::Multivariate { .. } => MULTIVARIATE_DIM,
            _ => 1,
        }
    }

    /// Coordinates on which the contrast and the effect depend.
    pub fn active_dims(&self) -> &'static [usize] {
        match self.family {
            DgpFamily::Multivariate { .. } => &[0, 1],
            _ => &[0],
        }
    }

    pub fn is_univariate(&self) -> bool {
        self.dim() == 1
    }

    pub fn rct_law(&self) -> GaussianLaw {
        match self.family {
            DgpFamily::Univariate { theta } | DgpFamily::ConstantEffect { theta, .. } => {
                GaussianLaw::iid(1, -theta, 1.0 - theta)
            }
            DgpFamily::Multivariate { .. } => {
                GaussianLaw::iid(MULTIVARIATE_DIM, MULTIVARIATE_RCT_MEAN, 1.0)
            }
        }
    }

    pub fn obs_law(&self) -> GaussianLaw {
        match self.family {
            DgpFamily::Multivariate { sigma0_sq, .. } => {
                GaussianLaw::iid(MULTIVARIATE_DIM, 0.0, sigma0_sq)
            }
            _ => GaussianLaw::iid(1, 0.0, 1.0),
        }
    }

    /// Observational treatment-control contrast.
    pub fn delta(&self, x: &[f64]) -> f64 {
        match self.family {
            DgpFamily::Multivariate { .. } => expit(0.5 * x[0]) * expit(1.0 - 0.5 * x[1]),
            _ => 0.75 * x[0] * x[0] + 3.0 * x[0] + 1.0,
        }
    }

    /// Conditional average treatment effect in the experiment.
    pub fn mu(&self, x: &[f64]) -> f64 {
        match self.family {
            DgpFamily::Univariate { .. } => self.delta(x) - x[0],
            DgpFamily::ConstantEffect { effect, .. } => effect,
            DgpFamily::Multivariate { eta, .. } => {
                0.5 + 0.5 * self.delta(x) + eta * (x[0] + 1.0) * (x[1] + 1.0)
            }
        }
    }

    /// Observational control-arm mean.
    pub fn m0(&self, x: &[f64]) -> f64 {
        match self.family {
            DgpFamily::Multivariate { .. } => {
                x[0].sin()
                    + x[1].cos()
                    + (2.0 * x[0]).sin() * (2.0 * x[1]).cos()
                    + 0.5 * x.iter().sum::<f64>()
            }
            _ => x[0],
        }
    }

    pub fn m1(&self, x: &[f64]) -> f64 {
        self.m0(x) + self.delta(x)
    }

    /// Observational arm mean `m_z`.
    pub fn arm_mean(&self, z: bool, x: &[f64]) -> f64 {
        if z {
            self.m1(x)
        } else {
            self.m0(x)
        }
    }

    /// Observational propensity `P(Z = 1 | X = x)`.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        match self.family {
            DgpFamily::Multivariate { .. } => normal::cdf((2.0 * x[1] - x[0]) / 5.0),
            _ => 0.5,
        }
    }

    /// Likelihood ratio of experimental to observational covariate densities.
    pub fn likelihood_ratio(&self, x: &[f64]) -> f64 {
        (self.rct_law().ln_density(x) - self.obs_law().ln_density(x)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_closed_forms() {
        let d = DgpSpec::univariate(0.3).unwrap();
        assert_eq!(d.delta(&[0.0]), 1.0);
        assert_eq!(d.mu(&[1.0]), 0.75 + 3.0 + 1.0 - 1.0);
        assert_eq!(d.m1(&[2.0]) - d.m0(&[2.0]), d.delta(&[2.0]));
        assert_eq!(d.propensity(&[5.0]), 0.5);
    }

    #[test]
    fn likelihood_ratio_identity_at_theta_zero() {
        let d = DgpSpec::univariate(0.0).unwrap();
        for x in [-3.0, 0.0, 1.7] {
            assert!((d.likelihood_ratio(&[x]) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DgpSpec::univariate(1.0).is_err());
        assert!(DgpSpec::univariate(-0.1).is_err());
        assert!(DgpSpec::multivariate(0.0, 0.0).is_err());
    }

    #[test]
    fn multivariate_contrast_and_propensity() {
        let d = DgpSpec::multivariate(0.5, 1.0).unwrap();
        let x = vec![0.0; MULTIVARIATE_DIM];
        assert!((d.delta(&x) - 0.5 * expit(1.0)).abs() < 1e-15);
        assert!((d.propensity(&x) - 0.5).abs() < 1e-15);
        assert!((d.mu(&x) - (0.5 + 0.25 * expit(1.0) + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn serializes_with_family_tag() {
        let d = DgpSpec::multivariate(0.5, 2.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"family\":\"multivariate\""), "{s}");
        let back: DgpSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
