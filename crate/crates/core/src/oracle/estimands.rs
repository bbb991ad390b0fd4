//! Population estimands of a known DGP by quadrature.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::dgp_spec::DgpSpec;
use super::quadrature::{GaussHermite, QuadratureSpec, TensorGrid};
use crate::basis::BasisExpansion;
use crate::error::{Error, Result};
use crate::linalg::solve_gram;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEstimands {
    /// Transported average treatment effect `E_obs[mu(X)]`.
    pub tau: f64,
    /// Projected estimand `E_obs[psi(Delta(X))]' beta_bar`.
    pub tau_bar: f64,
    /// Population calibration coefficients under the experimental law.
    pub beta_bar: Vec<f64>,
    /// `E_rct[psi psi']^{-1} E_obs[psi]`.
    pub alpha_bar: Vec<f64>,
    /// Asymptotic variance of `sqrt(n) (tau_bar_hat - tau_bar)`.
    pub sigma: f64,
}

impl OracleEstimands {
    /// Calibrated effect `beta_bar' psi(Delta(x))`.
    pub fn mu_bar(&self, dgp: &DgpSpec, psi: &BasisExpansion, x: &[f64]) -> f64 {
        dot(&self.beta_bar, &psi.eval(dgp.delta(x)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quadrature grids for the experimental and observational covariate laws.
pub(crate) struct Grids {
    pub rct: TensorGrid,
    pub obs: TensorGrid,
    pub rule: GaussHermite,
}

impl Grids {
    pub fn new(dgp: &DgpSpec, quad: &QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        dgp.validate()?;
        let rule = GaussHermite::new(quad.order)?;
        Ok(Self {
            rct: TensorGrid::new(&dgp.rct_law(), dgp.active_dims(), &rule),
            obs: TensorGrid::new(&dgp.obs_law(), dgp.active_dims(), &rule),
            rule,
        })
    }
}

/// Flattened `E[psi psi']` under a grid.
pub(crate) fn second_moment(
    grid: &TensorGrid,
    p: usize,
    f: impl Fn(&[f64], &mut [f64]),
) -> DMatrix<f64> {
    let flat = grid.expect_vec(p * p, |x, out| {
        let mut v = vec![0.0; p];
        f(x, &mut v);
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = v[i] * v[j];
            }
        }
    });
    DMatrix::from_row_slice(p, p, &flat)
}

pub fn oracle_estimands(
    dgp: &DgpSpec,
    psi: &BasisExpansion,
    quad: &QuadratureSpec,
) -> Result<OracleEstimands> {
    let grids = Grids::new(dgp, quad)?;
    estimands_on(dgp, psi, &grids)
}

pub(crate) fn estimands_on(
    dgp: &DgpSpec,
    psi: &BasisExpansion,
    grids: &Grids,
) -> Result<OracleEstimands> {
    let p = psi.dim();
    let basis = |x: &[f64], out: &mut [f64]| out.copy_from_slice(&psi.eval(dgp.delta(x)));

    let gram = second_moment(&grids.rct, p, basis);
    let cross = grids.rct.expect_vec(p, |x, out| {
        let m = dgp.mu(x);
        for (o, b) in out.iter_mut().zip(psi.eval(dgp.delta(x))) {
            *o = m * b;
        }
    });
    let (beta, _) = solve_gram(&gram, &DVector::from_vec(cross)).map_err(|e| match e {
        Error::Collinearity { .. } => Error::invalid(format!(
            "basis {psi} is degenerate under the experimental law: {e}"
        )),
        other => other,
    })?;
    let obs_mean = grids.obs.expect_vec(p, basis);
    let (alpha, _) = solve_gram(&gram, &DVector::from_vec(obs_mean.clone()))?;
    let beta_bar: Vec<f64> = beta.iter().copied().collect();
    let alpha_bar: Vec<f64> = alpha.iter().copied().collect();

    let tau = grids.obs.expect(|x| dgp.mu(x));
    let tau_bar = dot(&obs_mean, &beta_bar);
    let noise = dgp.sigma_d * dgp.sigma_d;
    let sigma = grids.rct.expect(|x| {
        let b = psi.eval(dgp.delta(x));
        let resid = dgp.mu(x) - dot(&beta_bar, &b);
        (noise + resid * resid) * dot(&alpha_bar, &b).powi(2)
    });

    Ok(OracleEstimands {
        tau,
        tau_bar,
        beta_bar,
        alpha_bar,
        sigma,
    })
}
