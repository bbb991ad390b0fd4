//! Run configuration for the command-line tool: a JSON file with every key
//! optional, command-line overrides, and parameter grids over the
//! simulation DGP families.
//!
//! Example file:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "family": "univariate",
//!   "grid": "theta=0,0.3,0.7",
//!   "replications": 1000,
//!   "contrast_learner": "oracle",
//!   "estimators": ["tau_bar", "aipsw", "collab"]
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::basis::BasisExpansion;
use crate::calibrate::EstimatorTag;
use crate::error::{Error, Result};
use crate::harness::{EstimatorSettings, ScenarioConfig};
use crate::nuisance::ContrastLearnerKind;
use crate::oracle::{DgpSpec, QuadratureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFamily {
    #[default]
    Univariate,
    Multivariate,
    ConstantEffect,
}

impl GridFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Univariate => "univariate",
            Self::Multivariate => "multivariate",
            Self::ConstantEffect => "constant_effect",
        }
    }

    /// Grid keys accepted by the family, with their defaults.
    pub fn parameters(&self) -> &'static [(&'static str, f64)] {
        match self {
            Self::Univariate => &[("theta", 0.0)],
            Self::Multivariate => &[("eta", 0.0), ("sigma0_sq", 1.0)],
            Self::ConstantEffect => &[("theta", 0.0), ("effect", 1.0)],
        }
    }

    fn build(&self, values: &[f64], sigma_d: f64, sigma_y: f64) -> Result<DgpSpec> {
        let dgp = match self {
            Self::Univariate => DgpSpec::univariate(values[0]),
            Self::Multivariate => DgpSpec::multivariate(values[0], values[1]),
            Self::ConstantEffect => DgpSpec::constant_effect(values[0], values[1]),
        }?;
        dgp.with_noise(sigma_d, sigma_y)
    }
}

impl fmt::Display for GridFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "univariate" => Ok(Self::Univariate),
            "multivariate" => Ok(Self::Multivariate),
            "constant_effect" => Ok(Self::ConstantEffect),
            other => Err(Error::Config(format!(
                "unknown DGP family {other:?}; expected univariate, multivariate or constant_effect"
            ))),
        }
    }
}

/// One point of an expanded parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub index: usize,
    pub id: String,
    pub dgp: DgpSpec,
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Expands `key=v1,v2;key2=w1,...` into the Cartesian product of the listed
/// values, first key outermost. Keys not mentioned take the family default;
/// an empty string yields the single default point.
pub fn expand_grid(family: GridFamily, spec: &str, sigma_d: f64, sigma_y: f64) -> Result<Vec<GridPoint>> {
    let params = family.parameters();
    let mut axes: Vec<(usize, Vec<f64>)> = Vec::new();
    for token in spec.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, values) = token
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid token {token:?} is not of the form key=v1,v2,...")))?;
        let key = key.trim();
        let pos = params.iter().position(|(k, _)| *k == key).ok_or_else(|| {
            let known: Vec<&str> = params.iter().map(|(k, _)| *k).collect();
            Error::Config(format!("unknown grid key {key:?} for the {family} family; expected one of {known:?}"))
        })?;
        if axes.iter().any(|(p, _)| *p == pos) {
            return Err(Error::Config(format!("grid key {key:?} given twice")));
        }
        let vals = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("grid value {v:?} for {key:?} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        axes.push((pos, vals));
    }

    let mut points = Vec::new();
    let mut counters = vec![0usize; axes.len()];
    loop {
        let mut values: Vec<f64> = params.iter().map(|(_, d)| *d).collect();
        let mut id_parts = Vec::new();
        for ((pos, vals), &c) in axes.iter().zip(&counters) {
            values[*pos] = vals[c];
            id_parts.push(format!("{}{}", params[*pos].0, format_value(vals[c])));
        }
        let id = if id_parts.is_empty() { family.as_str().to_string() } else { id_parts.join("_") };
        let dgp = family
            .build(&values, sigma_d, sigma_y)
            .map_err(|e| Error::Config(format!("grid point {id}: {}", e.root())))?;
        points.push(GridPoint {
            index: points.len(),
            id,
            dgp,
        });

        let mut axis = axes.len();
        loop {
            if axis == 0 {
                return Ok(points);
            }
            axis -= 1;
            counters[axis] += 1;
            if counters[axis] < axes[axis].1.len() {
                break;
            }
            counters[axis] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for WeightGrid {
    fn default() -> Self {
        Self {
            x_min: -4.0,
            x_max: 4.0,
            points: 161,
        }
    }
}

impl WeightGrid {
    pub fn xs(&self) -> Vec<f64> {
        let step = (self.x_max - self.x_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.x_min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub estimators: Vec<EstimatorTag>,
    pub k_folds: usize,
    pub psi: BasisExpansion,
    /// Defaults to `oracle` for `simulate` and `knn_t` for `estimate`.
    pub contrast_learner: Option<ContrastLearnerKind>,
    pub baseline: BaselineConfig,
    pub quadrature: QuadratureSpec,

    pub family: GridFamily,
    pub grid: String,
    pub sigma_d: f64,
    pub sigma_y: f64,
    pub n: usize,
    pub n_obs: usize,
    pub replications: usize,

    pub exp_csv: Option<PathBuf>,
    pub obs_csv: Option<PathBuf>,

    /// Experimental share of the fused sample, for the sampling propensity.
    pub rho2: f64,
    pub weight_grid: WeightGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 0.05,
            threads: None,
            out: PathBuf::from("out"),
            estimators: EstimatorTag::ALL.to_vec(),
            k_folds: 5,
            psi: BasisExpansion::linear(),
            contrast_learner: None,
            baseline: BaselineConfig::default(),
            quadrature: QuadratureSpec::default(),
            family: GridFamily::Univariate,
            grid: String::new(),
            sigma_d: 1.0,
            sigma_y: 1.0,
            n: crate::dgp::DEFAULT_N,
            n_obs: crate::dgp::DEFAULT_N_OBS,
            replications: 1000,
            exp_csv: None,
            obs_csv: None,
            rho2: 0.01,
            weight_grid: WeightGrid::default(),
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub estimators: Option<String>,
    pub k_folds: Option<usize>,
    pub psi: Option<String>,
    pub contrast_learner: Option<String>,
    pub family: Option<String>,
    pub grid: Option<String>,
    pub n: Option<usize>,
    pub n_obs: Option<usize>,
    pub replications: Option<usize>,
    pub exp_csv: Option<PathBuf>,
    pub obs_csv: Option<PathBuf>,
    pub rho2: Option<f64>,
}

/// Parses a comma-separated estimator list.
pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorTag>> {
    let mut out = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let tag: EstimatorTag = tok.parse()?;
        if !out.contains(&tag) {
            out.push(tag);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty estimator list".into()));
    }
    Ok(out)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.estimators {
            self.estimators = parse_estimators(v)?;
        }
        if let Some(v) = o.k_folds {
            self.k_folds = v;
        }
        if let Some(v) = &o.psi {
            self.psi = v.parse().map_err(config_err)?;
        }
        if let Some(v) = &o.contrast_learner {
            self.contrast_learner = Some(v.parse().map_err(config_err)?);
        }
        if let Some(v) = &o.family {
            self.family = v.parse()?;
        }
        if let Some(v) = &o.grid {
            self.grid = v.clone();
        }
        if let Some(v) = o.n {
            self.n = v;
        }
        if let Some(v) = o.n_obs {
            self.n_obs = v;
        }
        if let Some(v) = o.replications {
            self.replications = v;
        }
        if let Some(v) = &o.exp_csv {
            self.exp_csv = Some(v.clone());
        }
        if let Some(v) = &o.obs_csv {
            self.obs_csv = Some(v.clone());
        }
        if let Some(v) = o.rho2 {
            self.rho2 = v;
        }
        Ok(())
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.k_folds == 0 {
            return Err(Error::Config("k_folds must be at least 1".into()));
        }
        if !(self.sigma_d >= 0.0 && self.sigma_y >= 0.0) {
            return Err(Error::Config("noise scales must be nonnegative".into()));
        }
        if !(self.baseline.prob_clip > 0.0 && self.baseline.prob_clip < 0.5) || self.baseline.folds_exp == 0 {
            return Err(Error::Config("baseline needs prob_clip in (0, 0.5) and folds_exp >= 1".into()));
        }
        self.quadrature.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn grid_points(&self) -> Result<Vec<GridPoint>> {
        expand_grid(self.family, &self.grid, self.sigma_d, self.sigma_y)
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            estimators: self.estimators.clone(),
            k_folds: self.k_folds,
            psi: self.psi,
            alpha: self.alpha,
            baseline: self.baseline,
        }
    }

    /// Input paths for `estimate`, checked to exist.
    pub fn input_paths(&self) -> Result<(&Path, &Path)> {
        fn get<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
            let p = p
                .as_deref()
                .ok_or_else(|| Error::Config(format!("{name} is required")))?;
            if !p.is_file() {
                return Err(Error::Config(format!("{name} {} does not exist", p.display())));
            }
            Ok(p)
        }
        Ok((get(&self.exp_csv, "exp_csv")?, get(&self.obs_csv, "obs_csv")?))
    }

    /// One harness scenario per grid point, validated.
    pub fn scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        let learner = self.contrast_learner.unwrap_or(ContrastLearnerKind::Oracle);
        self.grid_points()?
            .into_iter()
            .map(|g| {
                let s = ScenarioConfig {
                    id: g.id,
                    index: g.index as u64,
                    dgp: g.dgp,
                    n: self.n,
                    n_obs: self.n_obs,
                    replications: self.replications,
                    estimators: self.estimators.clone(),
                    contrast_learner: learner,
                    k_folds: self.k_folds,
                    psi: self.psi,
                    alpha: self.alpha,
                    master_seed: self.seed,
                    baseline: self.baseline,
                    quadrature: self.quadrature,
                };
                if learner == ContrastLearnerKind::KernelT && s.dgp.dim() != 1 {
                    return Err(Error::Config("kernel_t needs a single covariate".into()));
                }
                s.validate().map_err(config_err)?;
                Ok(s)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_grid_has_eight_points() {
        let g = expand_grid(GridFamily::Univariate, "theta=0,0.1,0.2,0.3,0.4,0.5,0.6,0.7", 1.0, 1.0).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[3].id, "theta0.3");
        assert_eq!(g[7].index, 7);
    }

    #[test]
    fn product_grid_order() {
        let g = expand_grid(GridFamily::Multivariate, "eta=0,0.5; sigma0_sq=1,2", 1.0, 1.0).unwrap();
        let ids: Vec<&str> = g.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["eta0_sigma0_sq1", "eta0_sigma0_sq2", "eta0.5_sigma0_sq1", "eta0.5_sigma0_sq2"]);
    }

    #[test]
    fn empty_grid_is_the_default_point() {
        let g = expand_grid(GridFamily::ConstantEffect, "", 1.0, 1.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].dgp, DgpSpec::constant_effect(0.0, 1.0).unwrap());
    }

    #[test]
    fn bad_grid_tokens() {
        for spec in ["theta", "theta=0,x", "phi=1", "theta=0;theta=1", "theta=1.5", "theta=nan"] {
            let e = expand_grid(GridFamily::Univariate, spec, 1.0, 1.0).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{spec}: {e}");
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut c = RunConfig::from_json(r#"{"seed": 3, "alpha": 0.1, "grid": "theta=0.2"}"#).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            estimators: Some("collab,tau_bar".into()),
            psi: Some("poly2".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.estimators, vec![EstimatorTag::Collab, EstimatorTag::TauBar]);
        assert_eq!(c.psi.dim(), 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 3}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"baseline": {"clip": 0.1}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig {
            contrast_learner: Some(ContrastLearnerKind::RidgePoly(2)),
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_estimator_list() {
        assert!(parse_estimators("tau_bar,ipw").is_err());
        assert!(parse_estimators(" , ").is_err());
    }

    #[test]
    fn scenarios_carry_grid_index() {
        let c = RunConfig {
            grid: "theta=0,0.7".into(),
            replications: 3,
            ..RunConfig::default()
        };
        let s = c.scenarios().unwrap();
        assert_eq!(s[1].index, 1);
        assert_eq!(s[1].id, "theta0.7");
        assert_eq!(s[1].contrast_learner, ContrastLearnerKind::Oracle);
    }
}
