//! One-dimensional Nadaraya–Watson regression with a Gaussian kernel.

use crate::error::{Error, Result};

/// Kernel weights beyond this many bandwidths are ignored.
const WINDOW: f64 = 8.0;
/// Above this many training points the data are linearly binned first.
pub const BINNING_THRESHOLD: usize = 4096;
const GRID_SIZE: usize = 2048;

/// Silverman's rule `1.06 sd m^{-1/5}`, with the population sd.
pub fn silverman_bandwidth(u: &[f64]) -> f64 {
    let m = u.len() as f64;
    let mean = u.iter().sum::<f64>() / m;
    let sd = (u.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / m).sqrt();
    1.06 * sd * m.powf(-0.2)
}

/// Support points with nonnegative masses. Unbinned, masses are one and the
/// points are the sorted training inputs; binned, they are grid nodes.
#[derive(Debug, Clone)]
pub struct NadarayaWatson {
    points: Vec<f64>,
    mass: Vec<f64>,
    weighted_v: Vec<f64>,
    /// Training pairs sorted by `u`, for the nearest-point fallback.
    sorted_u: Vec<f64>,
    sorted_v: Vec<f64>,
    v_range: (f64, f64),
    bandwidth: f64,
    binned: bool,
}

impl NadarayaWatson {
    pub fn fit(u: &[f64], v: &[f64], bandwidth: f64) -> Result<Self> {
        if u.len() != v.len() || u.is_empty() {
            return Err(Error::invalid("kernel regression needs matching nonempty inputs"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if u.iter().chain(v).any(|a| !a.is_finite()) {
            return Err(Error::invalid("kernel regression inputs must be finite"));
        }
        let mut order: Vec<usize> = (0..u.len()).collect();
        order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        let sorted_u: Vec<f64> = order.iter().map(|&i| u[i]).collect();
        let sorted_v: Vec<f64> = order.iter().map(|&i| v[i]).collect();

        let lo = sorted_u[0];
        let hi = sorted_u[sorted_u.len() - 1];
        let binned = u.len() > BINNING_THRESHOLD && hi > lo;
        let (points, mass, weighted_v) = if binned {
            let step = (hi - lo) / (GRID_SIZE - 1) as f64;
            let mut mass = vec![0.0; GRID_SIZE];
            let mut wv = vec![0.0; GRID_SIZE];
            for (&a, &b) in sorted_u.iter().zip(&sorted_v) {
                let pos = ((a - lo) / step).min((GRID_SIZE - 1) as f64);
                let left = (pos.floor() as usize).min(GRID_SIZE - 2);
                let frac = pos - left as f64;
                mass[left] += 1.0 - frac;
                mass[left + 1] += frac;
                wv[left] += (1.0 - frac) * b;
                wv[left + 1] += frac * b;
            }
            let points = (0..GRID_SIZE).map(|g| lo + step * g as f64).collect();
            (points, mass, wv)
        } else {
            (sorted_u.clone(), vec![1.0; u.len()], sorted_v.clone())
        };
        let v_range = sorted_v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        Ok(Self {
            points,
            mass,
            weighted_v,
            v_range,
            sorted_u,
            sorted_v,
            bandwidth,
            binned,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn is_binned(&self) -> bool {
        self.binned
    }

    pub fn predict(&self, at: f64) -> f64 {
        let h = self.bandwidth;
        let start = self.points.partition_point(|&p| p < at - WINDOW * h);
        let end = self.points.partition_point(|&p| p <= at + WINDOW * h);
        let (mut num, mut den) = (0.0, 0.0);
        for g in start..end {
            let k = (-0.5 * ((self.points[g] - at) / h).powi(2)).exp();
            num += k * self.weighted_v[g];
            den += k * self.mass[g];
        }
        if den > 0.0 {
            // rounding can leave the ratio just outside the range of v
            (num / den).clamp(self.v_range.0, self.v_range.1)
        } else {
            self.nearest(at)
        }
    }

    fn nearest(&self, at: f64) -> f64 {
        let i = self.sorted_u.partition_point(|&p| p < at);
        let pick = if i == 0 {
            0
        } else if i == self.sorted_u.len() || at - self.sorted_u[i - 1] <= self.sorted_u[i] - at {
            i - 1
        } else {
            i
        };
        self.sorted_v[pick]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(u: &[f64], v: &[f64], h: f64, at: f64) -> f64 {
        let w: Vec<f64> = u.iter().map(|a| (-0.5 * ((a - at) / h).powi(2)).exp()).collect();
        w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()
    }

    #[test]
    fn matches_brute_force_unbinned() {
        let u: Vec<f64> = (0..300).map(|i| ((i * 37) % 300) as f64 / 50.0).collect();
        let v: Vec<f64> = u.iter().map(|a| a.sin() + 0.1 * a).collect();
        let nw = NadarayaWatson::fit(&u, &v, 0.3).unwrap();
        for at in [0.0, 1.3, 2.9, 5.99] {
            assert!((nw.predict(at) - brute(&u, &v, 0.3, at)).abs() < 1e-12);
        }
    }

    #[test]
    fn binned_close_to_brute_force() {
        let u: Vec<f64> = (0..20_000).map(|i| (i as f64 * 0.618_034).fract() * 4.0).collect();
        let v: Vec<f64> = u.iter().map(|a| a * a).collect();
        let h = silverman_bandwidth(&u);
        let nw = NadarayaWatson::fit(&u, &v, h).unwrap();
        assert!(nw.is_binned());
        for at in [0.5, 2.0, 3.7] {
            let b = brute(&u, &v, h, at);
            assert!((nw.predict(at) - b).abs() < 1e-4 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn far_query_falls_back_to_nearest_point() {
        let nw = NadarayaWatson::fit(&[0.0, 1.0, 2.0], &[5.0, 6.0, 7.0], 0.01).unwrap();
        assert_eq!(nw.predict(100.0), 7.0);
        assert_eq!(nw.predict(-100.0), 5.0);
    }

    #[test]
    fn silverman_rule() {
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        let sd = 2.0_f64.sqrt();
        assert!((silverman_bandwidth(&u) - 1.06 * sd * 5.0_f64.powf(-0.2)).abs() < 1e-14);
    }
}
