//! Small dense solvers: Gram-matrix solves for OLS calibration and ridge
//! regression with generalized cross-validation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a Gram matrix is treated as singular.
pub const RANK_TOLERANCE: f64 = 1e-12;
/// Above this condition number the Cholesky route is replaced by an SVD solve.
pub const CHOLESKY_CONDITION_LIMIT: f64 = 1e8;

/// Eigenvalue condition number of a symmetric matrix, `inf` when it is not
/// positive definite.
pub fn condition_number(g: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `g * beta = rhs` for a symmetric positive definite `g`.
///
/// Returns the solution and the condition number of `g`. Fails with
/// [`Error::Collinearity`] when the smallest eigenvalue is below
/// `RANK_TOLERANCE * largest`.
pub fn solve_gram(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::Collinearity { condition });
    }
    let condition = max / min;
    let sol = if condition <= CHOLESKY_CONDITION_LIMIT {
        g.clone()
            .cholesky()
            .map(|c| c.solve(rhs))
            .ok_or(Error::Collinearity { condition })?
    } else {
        // V diag(1/lambda) V' rhs
        let proj = eig.eigenvectors.transpose() * rhs;
        let scaled = proj.component_div(&eig.eigenvalues);
        let mut x = &eig.eigenvectors * scaled;
        // one step of iterative refinement
        let r = rhs - g * &x;
        let proj = eig.eigenvectors.transpose() * r;
        x += &eig.eigenvectors * proj.component_div(&eig.eigenvalues);
        x
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalRank("non-finite solution".into()));
    }
    Ok((sol, condition))
}

/// How the ridge penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Fixed(f64),
    /// Minimize generalized cross-validation over a log-spaced grid.
    Gcv,
}

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    means: Vec<f64>,
    /// Zero marks a constant column, which is dropped.
    scales: Vec<f64>,
    coef: Vec<f64>,
    intercept: f64,
    lambda: f64,
}

impl RidgeModel {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut out = self.intercept;
        for (((c, m), s), v) in self.coef.iter().zip(&self.means).zip(&self.scales).zip(x) {
            if *s > 0.0 {
                out += c * (v - m) / s;
            }
        }
        out
    }
}

fn standardize(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let q = x[0].len();
    let mut means = vec![0.0; q];
    let mut scales = vec![0.0; q];
    for j in 0..q {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        let sd = v.sqrt();
        means[j] = m;
        scales[j] = if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 0.0 };
    }
    (means, scales)
}

pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], penalty: Penalty) -> Result<RidgeModel> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::invalid("ridge regression needs matching nonempty inputs"));
    }
    let q = x[0].len();
    if x.iter().any(|r| r.len() != q) {
        return Err(Error::invalid("ragged feature matrix"));
    }
    let (means, scales) = standardize(x);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let active: Vec<usize> = (0..q).filter(|&j| scales[j] > 0.0).collect();
    if active.is_empty() {
        return Ok(RidgeModel {
            means,
            scales,
            coef: vec![0.0; q],
            intercept: y_mean,
            lambda: match penalty {
                Penalty::Fixed(l) => l,
                Penalty::Gcv => 0.0,
            },
        });
    }
    let z = DMatrix::from_fn(n, active.len(), |i, a| {
        let j = active[a];
        (x[i][j] - means[j]) / scales[j]
    });
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let svd = z.svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::NumericalRank("svd failed".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::NumericalRank("svd failed".into()))?;
    let s = &svd.singular_values;
    let uty = u.transpose() * &yc;

    let lambda = match penalty {
        Penalty::Fixed(l) => {
            if !(l >= 0.0) {
                return Err(Error::invalid(format!("ridge penalty must be >= 0, got {l}")));
            }
            l
        }
        Penalty::Gcv => {
            let yc_norm2 = yc.norm_squared();
            let proj_norm2 = uty.norm_squared();
            let mut best = (f64::INFINITY, 1.0);
            for step in -32..=32 {
                let l = 10f64.powf(step as f64 / 4.0);
                let mut df = 1.0;
                let mut fit_resid = 0.0;
                for (k, &sk) in s.iter().enumerate() {
                    let shrink = sk * sk / (sk * sk + l);
                    df += shrink;
                    fit_resid += ((1.0 - shrink) * uty[k]).powi(2);
                }
                // residual = component outside span(U) plus shrunk part inside
                let rss = (yc_norm2 - proj_norm2).max(0.0) + fit_resid;
                let denom = n as f64 - df;
                if denom <= 0.0 {
                    continue;
                }
                let gcv = n as f64 * rss / (denom * denom);
                if gcv < best.0 {
                    best = (gcv, l);
                }
            }
            best.1
        }
    };

    let mut coef_std = DVector::zeros(active.len());
    for (k, &sk) in s.iter().enumerate() {
        let denom = sk * sk + lambda;
        if denom > 0.0 && sk > 0.0 {
            let factor = sk / denom * uty[k];
            coef_std += vt.row(k).transpose() * factor;
        }
    }
    if coef_std.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalRank("ridge solution is not finite".into()));
    }
    let mut coef = vec![0.0; q];
    for (a, &j) in active.iter().enumerate() {
        coef[j] = coef_std[a];
    }
    Ok(RidgeModel {
        means,
        scales,
        coef,
        intercept: y_mean,
        lambda,
    })
}
