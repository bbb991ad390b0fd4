//! Population quantities of the known simulation DGPs.

mod dgp_spec;
mod eif;
mod estimands;
mod quadrature;
mod weights;

pub use dgp_spec::{DgpFamily, DgpSpec, MULTIVARIATE_DIM, MULTIVARIATE_RCT_MEAN};
pub use eif::{
    efficiency_limit_check, eif_eval, eif_known_delta, moments, monte_carlo_eif, sample_eif_pairs,
    sampling_propensity, sampling_propensity_from_ratio, stratum_moments, EfficiencyRow,
    EifKind, EifMoments, NestedNuisances, NestedObservation,
};
pub use estimands::{oracle_estimands, OracleEstimands};
pub use quadrature::{GaussHermite, GaussianLaw, QuadratureSpec, TensorGrid};
pub use weights::{weight_function, weight_gamma_minvar, WeightCoefficients};
