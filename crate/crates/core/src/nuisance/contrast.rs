//! Cross-fit estimation of the observational treatment-control contrast.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::kernel::{silverman_bandwidth, NadarayaWatson};
use super::Regressor;
use crate::data::ObservationalSample;
use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::linalg::{ridge_fit, Penalty, RidgeModel};
use crate::oracle::DgpSpec;

/// Named contrast learner, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastLearnerKind {
    Oracle,
    KernelT,
    KnnT,
    RidgePoly(usize),
}

impl fmt::Display for ContrastLearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle => f.write_str("oracle"),
            Self::KernelT => f.write_str("kernel_t"),
            Self::KnnT => f.write_str("knn_t"),
            Self::RidgePoly(d) => write!(f, "ridge_poly{d}"),
        }
    }
}

impl FromStr for ContrastLearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "kernel_t" => Ok(Self::KernelT),
            "knn_t" => Ok(Self::KnnT),
            _ => s
                .strip_prefix("ridge_poly")
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|d| (1..=5).contains(d))
                .map(Self::RidgePoly)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown contrast learner {s:?}; expected oracle, kernel_t, knn_t or ridge_poly<1..5>"
                    ))
                }),
        }
    }
}

impl Serialize for ContrastLearnerKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContrastLearnerKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A contrast learner ready to fit. The oracle carries the DGP whose
/// closed-form contrast it returns.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastLearner {
    Oracle(Box<DgpSpec>),
    KernelT,
    KnnT,
    RidgePoly(usize),
}

impl ContrastLearner {
    pub fn resolve(kind: ContrastLearnerKind, dgp: Option<&DgpSpec>) -> Result<Self> {
        Ok(match kind {
            ContrastLearnerKind::Oracle => Self::Oracle(Box::new(
                dgp.ok_or_else(|| {
                    Error::Config("the oracle contrast learner needs a known DGP".into())
                })?
                .clone(),
            )),
            ContrastLearnerKind::KernelT => Self::KernelT,
            ContrastLearnerKind::KnnT => Self::KnnT,
            ContrastLearnerKind::RidgePoly(d) => Self::RidgePoly(d),
        })
    }

    pub fn kind(&self) -> ContrastLearnerKind {
        match self {
            Self::Oracle(_) => ContrastLearnerKind::Oracle,
            Self::KernelT => ContrastLearnerKind::KernelT,
            Self::KnnT => ContrastLearnerKind::KnnT,
            Self::RidgePoly(d) => ContrastLearnerKind::RidgePoly(*d),
        }
    }

    fn fit(&self, rows: &[&ObservationalSample]) -> Result<Arc<dyn Regressor>> {
        if let Self::Oracle(dgp) = self {
            return Ok(Arc::new(OracleContrast((**dgp).clone())));
        }
        let (treated, control): (Vec<&ObservationalSample>, Vec<&ObservationalSample>) =
            rows.iter().partition(|r| r.z);
        let m1 = self.fit_arm(&treated)?;
        let m0 = self.fit_arm(&control)?;
        Ok(Arc::new(TLearner { m1, m0 }))
    }

    fn fit_arm(&self, rows: &[&ObservationalSample]) -> Result<Arc<dyn Regressor>> {
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        match self {
            Self::KernelT => {
                if rows[0].x.len() != 1 {
                    return Err(Error::invalid(
                        "kernel_t needs a single covariate; use knn_t or ridge_poly",
                    ));
                }
                let u: Vec<f64> = rows.iter().map(|r| r.x[0]).collect();
                let mut h = silverman_bandwidth(&u);
                if !(h > 0.0) {
                    h = 1.0;
                }
                Ok(Arc::new(KernelArm(NadarayaWatson::fit(&u, &y, h)?)))
            }
            Self::KnnT => {
                let k = (rows.len() as f64).powf(0.4).ceil() as usize;
                Ok(Arc::new(Knn {
                    x: rows.iter().map(|r| r.x.clone()).collect(),
                    y,
                    k: k.clamp(1, rows.len()),
                }))
            }
            Self::RidgePoly(d) => {
                let x: Vec<Vec<f64>> = rows.iter().map(|r| poly_features(&r.x, *d)).collect();
                Ok(Arc::new(RidgeArm {
                    model: ridge_fit(&x, &y, Penalty::Gcv)?,
                    degree: *d,
                }))
            }
            Self::Oracle(_) => unreachable!("oracle has no arm models"),
        }
    }
}

/// Powers `x_j^1..x_j^degree` of every coordinate.
pub fn poly_features(x: &[f64], degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * degree);
    for &v in x {
        let mut p = 1.0;
        for _ in 0..degree {
            p *= v;
            out.push(p);
        }
    }
    out
}

#[derive(Debug)]
struct OracleContrast(DgpSpec);

impl Regressor for OracleContrast {
    fn predict(&self, x: &[f64]) -> f64 {
        self.0.delta(x)
    }
}

#[derive(Debug)]
struct TLearner {
    m1: Arc<dyn Regressor>,
    m0: Arc<dyn Regressor>,
}

impl Regressor for TLearner {
    fn predict(&self, x: &[f64]) -> f64 {
        self.m1.predict(x) - self.m0.predict(x)
    }
}

#[derive(Debug)]
struct KernelArm(NadarayaWatson);

impl Regressor for KernelArm {
    fn predict(&self, x: &[f64]) -> f64 {
        self.0.predict(x[0])
    }
}

#[derive(Debug)]
struct RidgeArm {
    model: RidgeModel,
    degree: usize,
}

impl Regressor for RidgeArm {
    fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict(&poly_features(x, self.degree))
    }
}

/// Brute-force k-nearest-neighbour mean under Euclidean distance.
#[derive(Debug)]
struct Knn {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
}

impl Regressor for Knn {
    fn predict(&self, at: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(at).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        let k = self.k;
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        d[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }
}

/// Contrast models trained with one fold held out each.
#[derive(Clone)]
pub struct ContrastFit {
    per_fold: Vec<Arc<dyn Regressor>>,
    learner_tag: String,
    /// Observational row indices each per-fold model was trained on.
    training_rows: Vec<Vec<usize>>,
    n_obs: usize,
}

impl fmt::Debug for ContrastFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContrastFit")
            .field("k", &self.per_fold.len())
            .field("learner_tag", &self.learner_tag)
            .field("n_obs", &self.n_obs)
            .finish()
    }
}

impl ContrastFit {
    /// Wraps already-fitted per-fold models. `training_rows[k]` lists the
    /// observational rows model `k` saw.
    pub fn from_models(
        per_fold: Vec<Arc<dyn Regressor>>,
        learner_tag: impl Into<String>,
        training_rows: Vec<Vec<usize>>,
        n_obs: usize,
    ) -> Result<Self> {
        if per_fold.is_empty() || per_fold.len() != training_rows.len() {
            return Err(Error::invalid("need one training-row set per fold model"));
        }
        Ok(Self {
            per_fold,
            learner_tag: learner_tag.into(),
            training_rows,
            n_obs,
        })
    }

    pub fn k(&self) -> usize {
        self.per_fold.len()
    }

    pub fn learner_tag(&self) -> &str {
        &self.learner_tag
    }

    pub fn training_rows(&self, fold: usize) -> &[usize] {
        &self.training_rows[fold]
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn per_fold(&self, fold: usize, x: &[f64]) -> f64 {
        self.per_fold[fold].predict(x)
    }

    pub fn averaged(&self, x: &[f64]) -> f64 {
        self.per_fold.iter().map(|m| m.predict(x)).sum::<f64>() / self.per_fold.len() as f64
    }

    /// `Delta^{(-k)}(X_i)` for every observational row `i` in fold `k`.
    pub fn out_of_fold(&self, obs: &[ObservationalSample], folds: &FoldAssignment) -> Result<Vec<f64>> {
        self.check_folds(obs.len(), folds)?;
        Ok(obs
            .iter()
            .enumerate()
            .map(|(i, r)| self.per_fold(folds.fold_of(i), &r.x))
            .collect())
    }

    pub fn check_folds(&self, n_obs: usize, folds: &FoldAssignment) -> Result<()> {
        if folds.k() != self.k() || folds.len() != n_obs || n_obs != self.n_obs {
            return Err(Error::invalid(format!(
                "fold assignment (k = {}, {} rows) does not match the contrast fit (k = {}, {} rows)",
                folds.k(),
                folds.len(),
                self.k(),
                self.n_obs
            )));
        }
        Ok(())
    }

    /// An averaged-only view usable as a plain regressor.
    pub fn averaged_regressor(&self) -> Arc<dyn Regressor> {
        Arc::new(Averaged(self.per_fold.clone()))
    }
}

#[derive(Debug)]
struct Averaged(Vec<Arc<dyn Regressor>>);

impl Regressor for Averaged {
    fn predict(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|m| m.predict(x)).sum::<f64>() / self.0.len() as f64
    }
}

/// Fits one contrast model per fold on the observational rows outside it.
/// With a single fold the model is trained on every row.
pub fn fit_contrast_crossfit(
    obs: &[ObservationalSample],
    folds: &FoldAssignment,
    learner: &ContrastLearner,
) -> Result<ContrastFit> {
    if folds.len() != obs.len() {
        return Err(Error::DimensionMismatch {
            context: "fold assignment".into(),
            expected: obs.len(),
            found: folds.len(),
        });
    }
    let mut per_fold = Vec::with_capacity(folds.k());
    let mut training_rows = Vec::with_capacity(folds.k());
    for k in 0..folds.k() {
        let rows = if folds.k() == 1 {
            (0..obs.len()).collect()
        } else {
            folds.complement(k)
        };
        let treated = rows.iter().filter(|&&i| obs[i].z).count();
        let control = rows.len() - treated;
        if !matches!(learner, ContrastLearner::Oracle(_)) && (treated < 2 || control < 2) {
            return Err(Error::DegenerateArm {
                fold: k,
                detail: format!(
                    "training rows outside the fold have {treated} treated and {control} control rows; need at least 2 of each"
                ),
            });
        }
        let train: Vec<&ObservationalSample> = rows.iter().map(|&i| &obs[i]).collect();
        per_fold.push(learner.fit(&train)?);
        training_rows.push(rows);
    }
    ContrastFit::from_models(per_fold, learner.kind().to_string(), training_rows, obs.len())
}
