use std::f64::consts::PI;
use std::sync::Arc;

use super::{check_inputs, Objective, ObjectiveKind};
use crate::batch::BatchSelector;
use crate::data::{Dataset, Targets};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::params::{dot, ParamVector};

/// Linear-Gaussian likelihood `y_i ~ N(x_i . w, noise_sigma^2)` with
/// `D = F` weights and no intercept (append a constant column for one).
#[derive(Clone, Debug)]
pub struct BayesLinearRegression {
    data: Arc<Dataset>,
    noise_sigma: f64,
}

impl BayesLinearRegression {
    pub fn new(data: Arc<Dataset>, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma > 0.0) {
            return Err(Error::Config(format!("noise sigma must be positive, got {noise_sigma}")));
        }
        match data.targets() {
            Targets::Regression { outputs: 1, .. } => {}
            _ => return Err(Error::Config("linear regression needs a single regression target".into())),
        }
        Ok(BayesLinearRegression { data, noise_sigma })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn target(&self, i: usize) -> f64 {
        match self.data.targets() {
            Targets::Regression { values, .. } => values[i],
            Targets::Labels { .. } => unreachable!(),
        }
    }

    fn point_nll(&self, w: &[f64], i: usize) -> f64 {
        let var = self.noise_sigma * self.noise_sigma;
        let r = self.target(i) - dot(self.data.row(i), w);
        0.5 * r * r / var + 0.5 * (2.0 * PI * var).ln()
    }
}

impl Objective for BayesLinearRegression {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::BayesLinearRegression
    }

    fn dimension(&self) -> usize {
        self.data.n_features()
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }

    fn value(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<f64> {
        check_inputs(self, theta, batch)?;
        let s: f64 = batch.indices().iter().map(|&i| self.point_nll(theta, i)).sum();
        check_finite(batch.scale() * s, "loss")
    }

    fn gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        let var = self.noise_sigma * self.noise_sigma;
        let mut g = ParamVector::zeros(self.dimension());
        for &i in batch.indices() {
            let x = self.data.row(i);
            let r = self.target(i) - dot(x, theta);
            g.axpy(-batch.scale() * r / var, x);
        }
        Ok(g)
    }

    fn conjugate(&self) -> Option<super::Conjugate<'_>> {
        Some(super::Conjugate::Linear(self))
    }

    fn hessian_vector_product(&self, theta: &ParamVector, v: &[f64], batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        check_dim(self.dimension(), v.len())?;
        let var = self.noise_sigma * self.noise_sigma;
        let mut hv = ParamVector::zeros(self.dimension());
        for &i in batch.indices() {
            let x = self.data.row(i);
            hv.axpy(batch.scale() * dot(x, v) / var, x);
        }
        Ok(hv)
    }

    fn point_log_likelihood(&self, theta: &ParamVector, index: usize) -> Result<f64> {
        check_dim(self.dimension(), theta.len())?;
        if index >= self.num_points() {
            return Err(Error::BatchIndex {
                index,
                len: self.num_points(),
            });
        }
        Ok(-self.point_nll(theta, index))
    }
}
