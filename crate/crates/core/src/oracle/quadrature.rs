//! Gauss–Hermite quadrature for expectations under products of independent
//! Gaussian laws.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`. Weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (off-diagonal `sqrt(k)`).
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j {
                (j as f64).sqrt()
            } else if j + 1 == i {
                (i as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect(&self, mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
        let sd = var.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mean + sd * z))
            .sum()
    }
}

/// Quadrature settings for oracle computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Nodes per active dimension.
    pub order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { order: 64 }
    }
}

impl QuadratureSpec {
    pub const MIN_ORDER: usize = 32;

    pub fn validate(&self) -> Result<()> {
        if self.order < Self::MIN_ORDER {
            return Err(Error::invalid(format!(
                "quadrature order must be at least {}, got {}",
                Self::MIN_ORDER,
                self.order
            )));
        }
        Ok(())
    }
}

/// Product of independent normal laws, one per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianLaw {
    pub fn iid(dim: usize, mean: f64, var: f64) -> Self {
        Self {
            mean: vec![mean; dim],
            var: vec![var; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(xi, (m, v))| -0.5 * (LN_2PI + v.ln() + (xi - m).powi(2) / v))
            .sum()
    }

    /// Writes `f_self^2 / f_other` as `scale * f_tilted`.
    ///
    /// Returns `None` when the ratio is not integrable, i.e. when
    /// `2/var_self - 1/var_other <= 0` in some coordinate.
    pub fn squared_ratio_tilt(&self, other: &GaussianLaw) -> Option<(f64, GaussianLaw)> {
        let mut ln_scale = 0.0;
        let mut mean = Vec::with_capacity(self.dim());
        let mut var = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let (m1, v1) = (self.mean[j], self.var[j]);
            let (m0, v0) = (other.mean[j], other.var[j]);
            let prec = 2.0 / v1 - 1.0 / v0;
            if !(prec > 0.0) {
                return None;
            }
            let vs = 1.0 / prec;
            let ms = vs * (2.0 * m1 / v1 - m0 / v0);
            ln_scale += 0.5 * (v0 * vs).ln() - v1.ln() + ms * ms / (2.0 * vs) - m1 * m1 / v1
                + m0 * m0 / (2.0 * v0);
            mean.push(ms);
            var.push(vs);
        }
        Some((ln_scale.exp(), GaussianLaw { mean, var }))
    }
}

/// Tensor-product grid over the `active` coordinates of a law; inactive
/// coordinates are held at their means.
#[derive(Debug, Clone)]
pub struct TensorGrid {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TensorGrid {
    pub fn new(law: &GaussianLaw, active: &[usize], rule: &GaussHermite) -> Self {
        let mut points = vec![law.mean.clone()];
        let mut weights = vec![1.0];
        for &j in active {
            let sd = law.var[j].sqrt();
            let mut np = Vec::with_capacity(points.len() * rule.nodes().len());
            let mut nw = Vec::with_capacity(np.capacity());
            for (p, w) in points.iter().zip(&weights) {
                for (z, wz) in rule.nodes().iter().zip(rule.weights()) {
                    let mut q = p.clone();
                    q[j] = law.mean[j] + sd * z;
                    np.push(q);
                    nw.push(w * wz);
                }
            }
            points = np;
            weights = nw;
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(|p| p.as_slice()).zip(self.weights.iter().copied())
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Componentwise expectation of a vector-valued integrand of length `len`.
    pub fn expect_vec(&self, len: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let mut acc = vec![0.0; len];
        let mut buf = vec![0.0; len];
        for (x, w) in self.iter() {
            f(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_moments() {
        let gh = GaussHermite::new(64).unwrap();
        let m = |k: i32| gh.expect(0.0, 1.0, |x| x.powi(k));
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn shifted_law_moments() {
        let gh = GaussHermite::new(40).unwrap();
        // E[X^2] for X ~ N(-0.7, 0.3)
        let v = gh.expect(-0.7, 0.3, |x| x * x);
        assert!((v - (0.49 + 0.3)).abs() < 1e-13);
    }

    #[test]
    fn tilt_matches_direct_integration() {
        let rct = GaussianLaw::iid(1, -0.3, 0.7);
        let obs = GaussianLaw::iid(1, 0.0, 1.0);
        let (scale, tilted) = rct.squared_ratio_tilt(&obs).unwrap();
        let gh = GaussHermite::new(64).unwrap();
        // E_rct[ratio * x^2] computed directly by quadrature under rct
        let direct = gh.expect(-0.3, 0.7, |x| {
            (rct.ln_density(&[x]) - obs.ln_density(&[x])).exp() * x * x
        });
        let via_tilt = scale * gh.expect(tilted.mean[0], tilted.var[0], |x| x * x);
        assert!((direct - via_tilt).abs() < 1e-10, "{direct} vs {via_tilt}");
    }

    #[test]
    fn tilt_absent_when_ratio_not_square_integrable() {
        let rct = GaussianLaw::iid(1, 0.0, 1.0);
        let obs = GaussianLaw::iid(1, 0.0, 0.4);
        assert!(rct.squared_ratio_tilt(&obs).is_none());
    }

    #[test]
    fn tensor_grid_two_dims() {
        let law = GaussianLaw {
            mean: vec![0.5, 0.5, 0.5],
            var: vec![1.0, 2.0, 1.0],
        };
        let grid = TensorGrid::new(&law, &[0, 1], &GaussHermite::new(32).unwrap());
        assert_eq!(grid.len(), 32 * 32);
        let e = grid.expect(|x| x[0] * x[1] + x[1] * x[1] + x[2]);
        assert!((e - (0.25 + 2.25 + 0.5)).abs() < 1e-12);
    }
}
