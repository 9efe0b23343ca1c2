//! Dense parameter vectors and the small set of slice kernels the optimizers use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector of model parameters.
///
/// Entries are finite at API boundaries; construction rejects NaN/Inf. Hot
/// loops operate on raw slices and re-check finiteness via the divergence
/// guard in the run loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("values", "parameter vector must be non-empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite entry {bad}")));
        }
        Ok(ParamVector(values))
    }

    /// Construct without the finiteness check. Internal use on values that
    /// come out of checked arithmetic.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn l2_norm_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum()
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    l2_norm_sq(xs).sqrt()
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

/// out = a - b
pub fn sub_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = a[i] - b[i];
    }
}

/// x += c * g
pub fn axpy(x: &mut [f64], c: f64, g: &[f64]) {
    for i in 0..x.len() {
        x[i] += c * g[i];
    }
}
