//! Basis expansions applied to the scalar contrast before calibration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Polynomial basis `(1, t, t^2, ..., t^degree)` in `t = delta + shift`.
///
/// The default is the linear basis `(1, delta)`. Always contains the
/// intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisExpansion {
    degree: usize,
    shift: f64,
}

impl Default for BasisExpansion {
    fn default() -> Self {
        Self::linear()
    }
}

impl BasisExpansion {
    pub const MAX_DEGREE: usize = 3;

    pub fn linear() -> Self {
        Self {
            degree: 1,
            shift: 0.0,
        }
    }

    pub fn polynomial(degree: usize) -> Result<Self> {
        if degree == 0 || degree > Self::MAX_DEGREE {
            return Err(Error::invalid(format!(
                "basis degree must be in 1..={}, got {degree}",
                Self::MAX_DEGREE
            )));
        }
        Ok(Self { degree, shift: 0.0 })
    }

    /// Same span evaluated at `delta + shift`.
    pub fn with_shift(self, shift: f64) -> Self {
        Self { shift, ..self }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Output dimension `p`.
    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, delta: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.eval_into(delta, &mut out);
        out
    }

    pub fn eval_into(&self, delta: f64, out: &mut Vec<f64>) {
        out.clear();
        let t = delta + self.shift;
        let mut pow = 1.0;
        for _ in 0..=self.degree {
            out.push(pow);
            pow *= t;
        }
    }

    /// Componentwise derivative with respect to `delta`.
    pub fn derivative(&self, delta: f64) -> Vec<f64> {
        let t = delta + self.shift;
        (0..=self.degree)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    j as f64 * t.powi(j as i32 - 1)
                }
            })
            .collect()
    }
}

impl fmt::Display for BasisExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "poly{}", self.degree)?;
        if self.shift != 0.0 {
            write!(f, "+{}", self.shift)?;
        }
        Ok(())
    }
}

impl FromStr for BasisExpansion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let deg = s
            .strip_prefix("poly")
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown basis {s:?}; expected poly1..poly3")))?;
        BasisExpansion::polynomial(deg).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Serialize for BasisExpansion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BasisExpansion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
