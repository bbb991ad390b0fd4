//! Calibrated outcome-regression estimation of transported treatment
//! effects, with AIPSW and collaborative baselines, a quadrature oracle for
//! the simulation designs, and a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod basis;
pub mod calibrate;
pub mod commands;
pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod folds;
pub mod harness;
pub mod linalg;
pub mod normal;
pub mod nuisance;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
