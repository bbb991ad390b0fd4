//! Samplers for the simulation data-generating processes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::{ExperimentalSample, ObservationalSample};
use crate::error::{Error, Result};
use crate::oracle::{DgpSpec, GaussianLaw};
use crate::rng::{role, RngStream};

/// Default experimental sample size.
pub const DEFAULT_N: usize = 100;
/// Default observational sample size.
pub const DEFAULT_N_OBS: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct SimulatedPair {
    pub exp: Vec<ExperimentalSample>,
    pub obs: Vec<ObservationalSample>,
    pub dgp: DgpSpec,
    pub master_seed: u64,
    pub stream_id: u64,
}

fn draw_covariates(law: &GaussianLaw, rng: &mut impl Rng) -> Vec<f64> {
    law.mean
        .iter()
        .zip(&law.var)
        .map(|(m, v)| {
            let z: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * z
        })
        .collect()
}

/// Draws `n` experimental and `n_obs` observational rows. The two datasets use
/// separate child streams of `rng`.
pub fn sample(dgp: &DgpSpec, n: usize, n_obs: usize, rng: &RngStream) -> Result<SimulatedPair> {
    dgp.validate()?;
    if n == 0 || n_obs == 0 {
        return Err(Error::invalid("sample sizes must be positive"));
    }
    let mut exp_rng = rng.child(role::EXPERIMENTAL);
    let rct = dgp.rct_law();
    let exp = (0..n)
        .map(|_| {
            let x = draw_covariates(&rct, &mut exp_rng);
            let e: f64 = StandardNormal.sample(&mut exp_rng);
            ExperimentalSample::new(dgp.mu(&x) + dgp.sigma_d * e, x)
        })
        .collect();

    let mut obs_rng = rng.child(role::OBSERVATIONAL);
    let law = dgp.obs_law();
    let obs = (0..n_obs)
        .map(|_| {
            let x = draw_covariates(&law, &mut obs_rng);
            let z = obs_rng.random::<f64>() < dgp.propensity(&x);
            let e: f64 = StandardNormal.sample(&mut obs_rng);
            ObservationalSample::new(dgp.arm_mean(z, &x) + dgp.sigma_y * e, z, x)
        })
        .collect();

    Ok(SimulatedPair {
        exp,
        obs,
        dgp: dgp.clone(),
        master_seed: rng.master_seed(),
        stream_id: rng.stream_id(),
    })
}

pub fn sample_univariate(theta: f64, n: usize, n_obs: usize, rng: &RngStream) -> Result<SimulatedPair> {
    sample(&DgpSpec::univariate(theta)?, n, n_obs, rng)
}

pub fn sample_multivariate(
    eta: f64,
    sigma0_sq: f64,
    n: usize,
    n_obs: usize,
    rng: &RngStream,
) -> Result<SimulatedPair> {
    sample(&DgpSpec::multivariate(eta, sigma0_sq)?, n, n_obs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = v.clone().count() as f64;
        let m = v.clone().sum::<f64>() / n;
        (m, v.map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn univariate_covariate_moments() {
        for theta in [0.0, 0.7] {
            let s = sample_univariate(theta, 100_000, 10, &RngStream::new(3, 1)).unwrap();
            let (m, v) = mean_var(s.exp.iter().map(|r| r.x[0]));
            let se = ((1.0 - theta) / 1e5_f64).sqrt();
            assert!((m + theta).abs() < 4.0 * se, "theta {theta}: mean {m}");
            // var of the sample variance for normals is 2 s^4 / (n-1)
            let se_v = (1.0 - theta) * (2.0 / 1e5_f64).sqrt();
            assert!((v - (1.0 - theta)).abs() < 4.0 * se_v, "theta {theta}: var {v}");
        }
    }

    #[test]
    fn univariate_arm_difference() {
        let s = sample_univariate(0.3, 10, 400_000, &RngStream::new(11, 0)).unwrap();
        let (mut s1, mut n1, mut s0, mut n0) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for r in &s.obs {
            if r.z {
                s1 += r.y;
                n1 += 1.0;
            } else {
                s0 += r.y;
                n0 += 1.0;
            }
        }
        // Var(Y | Z) = Var(m_z(X)) + 1, at most about 30 here
        let se = (30.0 / n1 + 30.0 / n0).sqrt();
        assert!((s1 / n1 - s0 / n0 - 1.75).abs() < 4.0 * se);
    }

    #[test]
    fn treatment_independent_of_covariate() {
        let s = sample_univariate(0.0, 10, 100_000, &RngStream::new(2, 2)).unwrap();
        let z: Vec<f64> = s.obs.iter().map(|r| f64::from(u8::from(r.z))).collect();
        let x: Vec<f64> = s.obs.iter().map(|r| r.x[0]).collect();
        let (mz, vz) = mean_var(z.iter().copied());
        let (mx, vx) = mean_var(x.iter().copied());
        let cov = z.iter().zip(&x).map(|(a, b)| (a - mz) * (b - mx)).sum::<f64>() / (z.len() as f64 - 1.0);
        assert!((cov / (vz * vx).sqrt()).abs() < 0.01);
    }

    #[test]
    fn multivariate_treated_fraction_and_dimension() {
        let s = sample_multivariate(0.0, 1.0, 50, 200_000, &RngStream::new(9, 0)).unwrap();
        assert!(s.exp.iter().all(|r| r.x.len() == 10));
        let frac = s.obs.iter().filter(|r| r.z).count() as f64 / 2e5;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / 2e5_f64).sqrt());
    }

    #[test]
    fn reproducible_and_stream_sensitive() {
        let a = sample_univariate(0.4, 5, 5, &RngStream::new(1, 7)).unwrap();
        let b = sample_univariate(0.4, 5, 5, &RngStream::new(1, 7)).unwrap();
        let c = sample_univariate(0.4, 5, 5, &RngStream::new(1, 8)).unwrap();
        assert_eq!(a.exp, b.exp);
        assert_eq!(a.obs, b.obs);
        assert_ne!(a.exp, c.exp);
    }

    #[test]
    fn rejects_bad_theta() {
        assert!(sample_univariate(1.2, 5, 5, &RngStream::new(0, 0)).is_err());
    }
}
