//! Logistic regression for the odds of belonging to the observational
//! dataset, fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROB_CLIP: f64 = 1e-6;
const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-6;
const SEPARATION_COEF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Linear,
    /// Linear terms, squares and pairwise products.
    Quadratic,
}

impl FeatureMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear => x.to_vec(),
            Self::Quadratic => {
                let mut out = x.to_vec();
                for i in 0..x.len() {
                    for j in i..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OddsFit {
    feature_map: FeatureMap,
    means: Vec<f64>,
    /// Zero marks a constant feature, which is dropped.
    scales: Vec<f64>,
    /// Intercept followed by one coefficient per mapped feature, on the
    /// standardized scale.
    coefficients: Vec<f64>,
    pub prob_clip: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when some standardized coefficient exceeds 30 in magnitude.
    pub separation: bool,
    pub n_experimental: usize,
    pub n_observational: usize,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl OddsFit {
    fn linear_predictor(&self, x: &[f64]) -> f64 {
        let f = self.feature_map.apply(x);
        let mut eta = self.coefficients[0];
        for (j, v) in f.iter().enumerate() {
            if self.scales[j] > 0.0 {
                eta += self.coefficients[j + 1] * (v - self.means[j]) / self.scales[j];
            }
        }
        eta
    }

    /// Clipped `P(experimental | x)` and whether clipping was applied.
    pub fn prob_experimental_clipped(&self, x: &[f64]) -> (f64, bool) {
        let p = sigmoid(self.linear_predictor(x));
        let c = p.clamp(self.prob_clip, 1.0 - self.prob_clip);
        (c, c != p)
    }

    pub fn prob_experimental(&self, x: &[f64]) -> f64 {
        self.prob_experimental_clipped(x).0
    }

    /// Odds of the observational dataset, `(1 - p) / p`.
    pub fn odds(&self, x: &[f64]) -> f64 {
        let p = self.prob_experimental(x);
        (1.0 - p) / p
    }

    /// Intercept and slopes on the original (unstandardized) mapped features,
    /// for the log-odds of being experimental.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let mut out = vec![self.coefficients[0]];
        for j in 0..self.means.len() {
            if self.scales[j] > 0.0 {
                let b = self.coefficients[j + 1] / self.scales[j];
                out[0] -= b * self.means[j];
                out.push(b);
            } else {
                out.push(0.0);
            }
        }
        out
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }
}

/// Fits `P(experimental | features)` by penalized IRLS. `is_experimental[i]`
/// labels row `i`.
pub fn fit_odds(
    features: &[Vec<f64>],
    is_experimental: &[bool],
    clip: f64,
    feature_map: FeatureMap,
) -> Result<OddsFit> {
    let m = features.len();
    if m == 0 || m != is_experimental.len() {
        return Err(Error::invalid("odds model needs matching nonempty inputs"));
    }
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::invalid(format!("probability clip must lie in (0, 0.5), got {clip}")));
    }
    let n_exp = is_experimental.iter().filter(|&&b| b).count();
    if n_exp == 0 || n_exp == m {
        return Err(Error::invalid("odds model needs both experimental and observational rows"));
    }
    let mapped: Vec<Vec<f64>> = features.iter().map(|x| feature_map.apply(x)).collect();
    let q = mapped[0].len();
    if mapped.iter().any(|r| r.len() != q) {
        return Err(Error::invalid("ragged feature matrix"));
    }
    if mapped.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("odds features must be finite"));
    }
    let mf = m as f64;
    let mut means = vec![0.0; q];
    let mut scales = vec![0.0; q];
    for j in 0..q {
        let mean = mapped.iter().map(|r| r[j]).sum::<f64>() / mf;
        let sd = (mapped.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / mf).sqrt();
        means[j] = mean;
        scales[j] = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 0.0 };
    }
    let active: Vec<usize> = (0..q).filter(|&j| scales[j] > 0.0).collect();
    let a = active.len() + 1;
    let z = DMatrix::from_fn(m, a, |i, c| {
        if c == 0 {
            1.0
        } else {
            let j = active[c - 1];
            (mapped[i][j] - means[j]) / scales[j]
        }
    });
    let y = DVector::from_iterator(m, is_experimental.iter().map(|&b| f64::from(u8::from(b))));

    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &z * beta;
        let ll: f64 = eta
            .iter()
            .zip(y.iter())
            .map(|(e, yi)| yi * e - (if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() }))
            .sum::<f64>()
            / mf;
        ll - 0.5 * RIDGE * beta.rows(1, a - 1).norm_squared()
    };

    let p0 = n_exp as f64 / mf;
    let mut beta = DVector::zeros(a);
    beta[0] = (p0 / (1.0 - p0)).ln();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let eta = &z * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut grad = z.transpose() * DVector::from_iterator(m, (0..m).map(|i| y[i] - p[i])) / mf;
        for c in 1..a {
            grad[c] -= RIDGE * beta[c];
        }
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let w: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).max(1e-12)).collect();
        let mut hess = DMatrix::zeros(a, a);
        for (i, wi) in w.iter().enumerate() {
            let row = z.row(i);
            for r in 0..a {
                let zr = row[r] * wi;
                for c in r..a {
                    hess[(r, c)] += zr * row[c];
                }
            }
        }
        for r in 0..a {
            for c in 0..r {
                hess[(r, c)] = hess[(c, r)];
            }
        }
        hess /= mf;
        for c in 1..a {
            hess[(c, c)] += RIDGE;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess
                .svd(true, true)
                .solve(&grad, 1e-14)
                .map_err(|e| Error::NumericalRank(e.to_string()))?,
        };
        let current = objective(&beta);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            if objective(&cand) >= current - 1e-15 || t < 1e-10 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let mut coefficients = vec![0.0; q + 1];
    coefficients[0] = beta[0];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j + 1] = beta[c + 1];
    }
    let separation = coefficients.iter().skip(1).any(|b| b.abs() > SEPARATION_COEF)
        || beta[0].abs() > SEPARATION_COEF;
    Ok(OddsFit {
        feature_map,
        means,
        scales,
        coefficients,
        prob_clip: clip,
        converged,
        iterations,
        separation,
        n_experimental: n_exp,
        n_observational: m - n_exp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn balanced_null_model() {
        let f = vec![vec![0.0]; 40];
        let lab: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let fit = fit_odds(&f, &lab, DEFAULT_PROB_CLIP, FeatureMap::Linear).unwrap();
        assert!((fit.odds(&[0.0]) - 1.0).abs() < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn prior_odds() {
        let f = vec![vec![0.0]; 10_100];
        let lab: Vec<bool> = (0..10_100).map(|i| i < 100).collect();
        let fit = fit_odds(&f, &lab, DEFAULT_PROB_CLIP, FeatureMap::Linear).unwrap();
        assert!((fit.odds(&[3.0]) / 100.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn rescaling_features_leaves_probabilities_unchanged() {
        let mut rng = RngStream::new(2, 0);
        let f: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let lab: Vec<bool> = f
            .iter()
            .map(|x: &Vec<f64>| {
                let u: f64 = rand::Rng::random(&mut rng);
                u < 1.0 / (1.0 + (-(0.5 * x[0] - x[1])).exp())
            })
            .collect();
        let a = fit_odds(&f, &lab, DEFAULT_PROB_CLIP, FeatureMap::Linear).unwrap();
        let scaled: Vec<Vec<f64>> = f.iter().map(|x| x.iter().map(|v| 7.5 * v).collect()).collect();
        let b = fit_odds(&scaled, &lab, DEFAULT_PROB_CLIP, FeatureMap::Linear).unwrap();
        for (x, xs) in f.iter().zip(&scaled).take(50) {
            assert!((a.prob_experimental(x) - b.prob_experimental(xs)).abs() < 1e-6);
        }
    }

    #[test]
    fn separated_classes_flagged_and_clipped() {
        let f: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64]).collect();
        let lab: Vec<bool> = (0..60).map(|i| i < 30).collect();
        let fit = fit_odds(&f, &lab, 1e-6, FeatureMap::Linear).unwrap();
        assert!(fit.separation);
        let (p, clipped) = fit.prob_experimental_clipped(&[-100.0]);
        assert!(clipped && p == 1.0 - 1e-6);
        assert!(fit.odds(&[1000.0]).is_finite());
    }

    #[test]
    fn quadratic_map() {
        assert_eq!(FeatureMap::Quadratic.apply(&[2.0, 3.0]), vec![2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn rejects_single_class() {
        assert!(fit_odds(&[vec![1.0], vec![2.0]], &[true, true], 1e-6, FeatureMap::Linear).is_err());
    }
}
