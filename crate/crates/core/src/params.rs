//! Flat parameter vectors and the isotropic Gaussian prior / initializer.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The optimizer state: a flat real vector of dimension `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Draws each coordinate i.i.d. from `N(0, sigma^2)`.
    pub fn sample_gaussian<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Self {
        ParamVector(
            (0..dim)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &[f64]) {
        debug_assert_eq!(self.0.len(), x.len());
        for (s, xi) in self.0.iter_mut().zip(x) {
            *s += a * xi;
        }
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Isotropic Gaussian `N(0, sigma0^2 I)`. Used both as the weight initializer
/// and as the prior in the log joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    sigma0: f64,
}

impl GaussianPrior {
    pub fn new(sigma0: f64) -> Result<Self> {
        if sigma0 > 0.0 && sigma0.is_finite() {
            Ok(GaussianPrior { sigma0 })
        } else {
            Err(Error::Config(format!("prior sigma0 must be positive, got {sigma0}")))
        }
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let var = self.sigma0 * self.sigma0;
        let sq: f64 = theta.iter().map(|x| x * x).sum();
        -0.5 * sq / var - 0.5 * theta.len() as f64 * (2.0 * PI * var).ln()
    }

    /// Differential entropy of the `dim`-dimensional distribution, in nats:
    /// `D/2 (1 + ln 2pi) + D ln sigma0`.
    pub fn entropy(&self, dim: usize) -> f64 {
        let d = dim as f64;
        0.5 * d * (1.0 + (2.0 * PI).ln()) + d * self.sigma0.ln()
    }
}
