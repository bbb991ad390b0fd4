//! Weight functions exhibiting the projected estimand as a weighted average
//! of the CATE, with the variance-minimizing choice of weight coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::dgp_spec::DgpSpec;
use super::estimands::{dot, second_moment, OracleEstimands};
use super::quadrature::{QuadratureSpec, TensorGrid};
use crate::basis::BasisExpansion;
use crate::error::{Error, Result};
use crate::linalg::solve_gram;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCoefficients {
    pub gamma: Vec<f64>,
    /// Constraint vector `E_obs[Lambda mu (mu - mu_bar) psi]`.
    pub b: Vec<f64>,
    /// Right-hand side of the constraint, `E_obs[mu - mu_bar] = tau - tau_bar`.
    pub target: f64,
    /// True when `b = 0`: the calibration is well specified and `w = 1`.
    pub unit_weights: bool,
}

/// Minimum-variance coefficients `gamma = target / (b'A^{-1}b) * A^{-1} b`
/// with `A = E_rct[Lambda (mu - mu_bar)^2 psi psi']`.
pub fn weight_gamma_minvar(
    dgp: &DgpSpec,
    psi: &BasisExpansion,
    estimands: &OracleEstimands,
    quad: &QuadratureSpec,
) -> Result<WeightCoefficients> {
    let grids = super::estimands::Grids::new(dgp, quad)?;
    let p = psi.dim();
    let resid = |x: &[f64]| dgp.mu(x) - estimands.mu_bar(dgp, psi, x);

    // E_obs[Lambda h] = E_rct[h]
    let b = grids.rct.expect_vec(p, |x, out| {
        let s = dgp.mu(x) * resid(x);
        for (o, v) in out.iter_mut().zip(psi.eval(dgp.delta(x))) {
            *o = s * v;
        }
    });
    let target = estimands.tau - estimands.tau_bar;
    let scale = 1.0 + grids.rct.expect(|x| dgp.mu(x).powi(2));
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm <= 1e-9 * scale {
        return Ok(WeightCoefficients {
            gamma: vec![0.0; p],
            b,
            target,
            unit_weights: true,
        });
    }

    // E_rct[Lambda h] = C * E_tilt[h] with f_rct^2 / f_obs = C f_tilt
    let (c, tilted) = dgp
        .rct_law()
        .squared_ratio_tilt(&dgp.obs_law())
        .ok_or_else(|| {
            Error::invalid("likelihood ratio is not square integrable under the observational law")
        })?;
    let tilt_grid = TensorGrid::new(&tilted, dgp.active_dims(), &grids.rule);
    let a: DMatrix<f64> = second_moment(&tilt_grid, p, |x, out| {
        let r = resid(x);
        for (o, v) in out.iter_mut().zip(psi.eval(dgp.delta(x))) {
            *o = r * v;
        }
    }) * c;
    let bv = DVector::from_vec(b.clone());
    let (a_inv_b, _) = solve_gram(&a, &bv).map_err(|e| {
        Error::NumericalRank(format!("weight quadrature matrix is degenerate: {e}"))
    })?;
    let denom = bv.dot(&a_inv_b);
    let gamma: Vec<f64> = a_inv_b.iter().map(|v| v * target / denom).collect();
    Ok(WeightCoefficients {
        gamma,
        b,
        target,
        unit_weights: false,
    })
}

/// `w(x) = 1 - Lambda(x) (mu(x) - mu_bar(x)) psi(Delta(x))' gamma`.
pub fn weight_function(
    x: &[f64],
    dgp: &DgpSpec,
    psi: &BasisExpansion,
    estimands: &OracleEstimands,
    gamma: &[f64],
) -> f64 {
    if gamma.iter().all(|g| *g == 0.0) {
        return 1.0;
    }
    let basis = psi.eval(dgp.delta(x));
    let resid = dgp.mu(x) - dot(&estimands.beta_bar, &basis);
    1.0 - dgp.likelihood_ratio(x) * resid * dot(&basis, gamma)
}
