//! Efficient influence functions for the projected estimand in the fused
//! ("nested") sampling framework, and the small-experiment efficiency limit.
//!
//! In the fused sample each row is `w = (q, x, y)`: `q = 2` marks an
//! experimental row (with `y` the effect measurement), `q in {0, 1}` an
//! observational row with treatment `q`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::dgp_spec::DgpSpec;
use super::estimands::{dot, estimands_on, Grids, OracleEstimands};
use super::quadrature::QuadratureSpec;
use crate::basis::BasisExpansion;
use crate::error::{Error, Result};
use crate::rng::{role, RngStream};

/// One row of the fused sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedObservation {
    pub q: u8,
    pub x: Vec<f64>,
    pub y: f64,
}

/// Nuisances of the fused-sample model for a fixed experimental share `rho2`.
#[derive(Debug, Clone)]
pub struct NestedNuisances {
    pub dgp: DgpSpec,
    pub psi: BasisExpansion,
    /// `(rho0, rho1, rho2)`, the marginal probabilities of `q`.
    pub rho: [f64; 3],
    pub estimands: OracleEstimands,
}

impl NestedNuisances {
    pub fn new(
        dgp: &DgpSpec,
        psi: &BasisExpansion,
        rho2: f64,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        let grids = Grids::new(dgp, quad)?;
        let estimands = estimands_on(dgp, psi, &grids)?;
        Self::from_estimands(dgp, psi, rho2, estimands, &grids)
    }

    fn from_estimands(
        dgp: &DgpSpec,
        psi: &BasisExpansion,
        rho2: f64,
        estimands: OracleEstimands,
        grids: &Grids,
    ) -> Result<Self> {
        if !(rho2 > 0.0 && rho2 < 1.0) {
            return Err(Error::invalid(format!("rho2 must lie in (0,1), got {rho2}")));
        }
        let treated_share = grids.obs.expect(|x| dgp.propensity(x));
        let rho1 = (1.0 - rho2) * treated_share;
        Ok(Self {
            dgp: dgp.clone(),
            psi: *psi,
            rho: [1.0 - rho2 - rho1, rho1, rho2],
            estimands,
        })
    }

    pub fn rho2(&self) -> f64 {
        self.rho[2]
    }

    /// `m_q(x) = E[Y | Q = q, X = x]`; `m_2` is the CATE.
    pub fn m(&self, q: u8, x: &[f64]) -> f64 {
        match q {
            0 => self.dgp.m0(x),
            1 => self.dgp.m1(x),
            _ => self.dgp.mu(x),
        }
    }

    pub fn r(&self, x: &[f64]) -> f64 {
        self.dgp.propensity(x)
    }

    pub fn lambda(&self, x: &[f64]) -> f64 {
        self.dgp.likelihood_ratio(x)
    }

    pub fn mu_bar(&self, x: &[f64]) -> f64 {
        self.estimands.mu_bar(&self.dgp, &self.psi, x)
    }

    /// AIPW-style residual of the observational contrast.
    pub fn iota(&self, w: &NestedObservation) -> Result<f64> {
        let r = self.r(&w.x);
        match w.q {
            1 => {
                if r <= 0.0 {
                    return Err(Error::DivisionByZero("observational propensity is 0".into()));
                }
                Ok((w.y - self.m(1, &w.x)) / r)
            }
            0 => {
                if r >= 1.0 {
                    return Err(Error::DivisionByZero("observational propensity is 1".into()));
                }
                Ok(-(w.y - self.m(0, &w.x)) / (1.0 - r))
            }
            _ => Ok(0.0),
        }
    }

    /// Sensitivity of the estimand to a perturbation of the contrast at `x`.
    pub fn kappa(&self, x: &[f64]) -> f64 {
        let delta = self.dgp.delta(x);
        let basis = self.psi.eval(delta);
        let grad = self.psi.derivative(delta);
        let beta = &self.estimands.beta_bar;
        let alpha = &self.estimands.alpha_bar;
        let m2 = self.m(2, x);
        // alpha' (m2 grad - (basis grad' + grad basis') beta)
        let grad_beta = dot(&grad, beta);
        let basis_beta = dot(&basis, beta);
        let inner: f64 = alpha
            .iter()
            .zip(basis.iter().zip(&grad))
            .map(|(a, (b, g))| a * (m2 * g - (b * grad_beta + g * basis_beta)))
            .sum();
        grad_beta + self.lambda(x) * inner
    }

    pub fn sample(&self, rng: &mut impl Rng) -> NestedObservation {
        let u: f64 = rng.random();
        let draw_law = |law: &super::quadrature::GaussianLaw, rng: &mut dyn rand::RngCore| {
            law.mean
                .iter()
                .zip(&law.var)
                .map(|(m, v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * z
                })
                .collect::<Vec<f64>>()
        };
        let eps: f64;
        if u < self.rho[2] {
            let x = draw_law(&self.dgp.rct_law(), rng);
            eps = StandardNormal.sample(rng);
            let y = self.dgp.mu(&x) + self.dgp.sigma_d * eps;
            NestedObservation { q: 2, x, y }
        } else {
            let x = draw_law(&self.dgp.obs_law(), rng);
            let treated = rng.random::<f64>() < self.r(&x);
            eps = StandardNormal.sample(rng);
            let y = self.dgp.arm_mean(treated, &x) + self.dgp.sigma_y * eps;
            NestedObservation {
                q: u8::from(treated),
                x,
                y,
            }
        }
    }
}

/// Efficient influence function when the contrast must be estimated.
pub fn eif_eval(w: &NestedObservation, nuis: &NestedNuisances, tau_bar: f64) -> Result<f64> {
    let known = eif_known_delta(w, nuis, tau_bar)?;
    if w.q == 2 {
        return Ok(known);
    }
    let extra = nuis.iota(w)? * nuis.kappa(&w.x) / (1.0 - nuis.rho2());
    Ok(known + extra)
}

/// Efficient influence function when the contrast is known.
pub fn eif_known_delta(w: &NestedObservation, nuis: &NestedNuisances, tau_bar: f64) -> Result<f64> {
    if w.q > 2 {
        return Err(Error::invalid(format!("q must be 0, 1 or 2, got {}", w.q)));
    }
    let mu_bar = nuis.mu_bar(&w.x);
    if w.q == 2 {
        let basis = nuis.psi.eval(nuis.dgp.delta(&w.x));
        Ok((w.y - mu_bar) * dot(&nuis.estimands.alpha_bar, &basis) / nuis.rho2())
    } else {
        Ok((mu_bar - tau_bar) / (1.0 - nuis.rho2()))
    }
}

/// Monte Carlo moments of an influence function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EifMoments {
    pub draws: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// `E[psi^2]`, the variance bound when the mean is zero.
    pub second_moment: f64,
    pub second_moment_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EifKind {
    EstimatedContrast,
    KnownContrast,
}

/// Pairs of `(eif_eval, eif_known_delta)` values over `draws` fused-sample
/// draws. Draws are split into chunks on independent sub-streams.
pub fn sample_eif_pairs(
    nuis: &NestedNuisances,
    draws: usize,
    master_seed: u64,
) -> Result<Vec<(f64, f64)>> {
    const CHUNK: usize = 50_000;
    let n_chunks = draws.div_ceil(CHUNK);
    let tau_bar = nuis.estimands.tau_bar;
    let chunks: Vec<Result<Vec<(f64, f64)>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(master_seed, crate::rng::stream_id(&[role::NESTED, c as u64]));
            let len = CHUNK.min(draws - c * CHUNK);
            (0..len)
                .map(|_| {
                    let w = nuis.sample(&mut rng);
                    Ok((eif_eval(&w, nuis, tau_bar)?, eif_known_delta(&w, nuis, tau_bar)?))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(draws);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn moments(values: impl Iterator<Item = f64> + Clone) -> EifMoments {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let second = values.clone().map(|v| v * v).sum::<f64>() / n;
    let var2 = values.map(|v| (v * v - second).powi(2)).sum::<f64>() / (n - 1.0);
    EifMoments {
        draws: n as usize,
        mean,
        mean_se: (var / n).sqrt(),
        second_moment: second,
        second_moment_se: (var2 / n).sqrt(),
    }
}

pub fn monte_carlo_eif(
    nuis: &NestedNuisances,
    draws: usize,
    master_seed: u64,
    kind: EifKind,
) -> Result<EifMoments> {
    let pairs = sample_eif_pairs(nuis, draws, master_seed)?;
    Ok(match kind {
        EifKind::EstimatedContrast => moments(pairs.iter().map(|p| p.0)),
        EifKind::KnownContrast => moments(pairs.iter().map(|p| p.1)),
    })
}

/// One row of the efficiency-limit table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub rho2: f64,
    /// `rho2 * V_eff`.
    pub scaled_bound: f64,
    pub sigma: f64,
    /// Observational-stratum second moment `E[(mu_bar - tau_bar + iota kappa)^2 | Q != 2]`.
    pub e1: f64,
    /// Experimental-stratum second moment; equals `sigma`.
    pub e2: f64,
}

impl EfficiencyRow {
    pub fn relative_gap(&self) -> f64 {
        (self.scaled_bound - self.sigma).abs() / self.sigma
    }
}

/// Conditional second moments of the efficient influence function in each
/// stratum, computed by quadrature. `iota` integrates out analytically given
/// homoskedastic outcome noise: `E[iota^2 | x] = sigma_y^2 / (r (1 - r))`.
pub fn stratum_moments(nuis: &NestedNuisances, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    let grids = Grids::new(&nuis.dgp, quad)?;
    let tau_bar = nuis.estimands.tau_bar;
    let sy2 = nuis.dgp.sigma_y * nuis.dgp.sigma_y;
    let e1 = grids.obs.expect(|x| {
        let r = nuis.r(x);
        let k = nuis.kappa(x);
        (nuis.mu_bar(x) - tau_bar).powi(2) + k * k * sy2 / (r * (1.0 - r))
    });
    let sd2 = nuis.dgp.sigma_d * nuis.dgp.sigma_d;
    let e2 = grids.rct.expect(|x| {
        let basis = nuis.psi.eval(nuis.dgp.delta(x));
        let resid = nuis.m(2, x) - nuis.mu_bar(x);
        (sd2 + resid * resid) * dot(&nuis.estimands.alpha_bar, &basis).powi(2)
    });
    Ok((e1, e2))
}

/// Tabulates `rho2 * V_eff` against the asymptotic variance of the
/// calibrated estimator over a grid of experimental shares, holding the
/// within-dataset laws fixed.
pub fn efficiency_limit_check(
    dgp: &DgpSpec,
    psi: &BasisExpansion,
    rho_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<EfficiencyRow>> {
    let grids = Grids::new(dgp, quad)?;
    let estimands = estimands_on(dgp, psi, &grids)?;
    let mut rows = Vec::with_capacity(rho_grid.len());
    let mut moments_cache = None;
    for &rho2 in rho_grid {
        let nuis = NestedNuisances::from_estimands(dgp, psi, rho2, estimands.clone(), &grids)?;
        let (e1, e2) = match moments_cache {
            Some(m) => m,
            None => {
                let m = stratum_moments(&nuis, quad)?;
                moments_cache = Some(m);
                m
            }
        };
        // V_eff = E1 / (1 - rho2) + E2 / rho2
        let v_eff = e1 / (1.0 - rho2) + e2 / rho2;
        rows.push(EfficiencyRow {
            rho2,
            scaled_bound: rho2 * v_eff,
            sigma: estimands.sigma,
            e1,
            e2,
        });
    }
    Ok(rows)
}

/// Experimental sampling propensity `P(Q = 2 | X = x)` from the likelihood ratio.
pub fn sampling_propensity_from_ratio(lambda: f64, rho2: f64) -> Result<f64> {
    if !(rho2 > 0.0 && rho2 < 1.0) {
        return Err(Error::invalid(format!("rho2 must lie in (0,1), got {rho2}")));
    }
    if lambda < 0.0 {
        return Err(Error::invalid("likelihood ratio must be nonnegative"));
    }
    Ok(rho2 * lambda / (rho2 * lambda + (1.0 - rho2)))
}

pub fn sampling_propensity(x: &[f64], rho2: f64, dgp: &DgpSpec) -> Result<f64> {
    sampling_propensity_from_ratio(dgp.likelihood_ratio(x), rho2)
}
