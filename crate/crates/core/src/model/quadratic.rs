use nalgebra::{DMatrix, DVector};

use super::{check_inputs, Objective, ObjectiveKind};
use crate::batch::BatchSelector;
use crate::error::{check_finite, Error, Result};
use crate::params::ParamVector;

/// `L(theta) = 1/2 (theta - mu)^T A (theta - mu)` with symmetric `A`.
///
/// Data-free; `exp(-L)` plays the role of the likelihood, which makes the
/// pair (Gaussian prior, quadratic) a conjugate oracle.
#[derive(Clone, Debug)]
pub struct Quadratic {
    a: DMatrix<f64>,
    mu: DVector<f64>,
}

impl Quadratic {
    pub fn new(a: DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: a.nrows(),
            });
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::Config(format!("quadratic matrix is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(Quadratic { a, mu })
    }

    pub fn isotropic(dim: usize) -> Self {
        Quadratic {
            a: DMatrix::identity(dim, dim),
            mu: DVector::zeros(dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.mu
    }

    fn offset(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(theta) - &self.mu
    }
}

impl Objective for Quadratic {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Quadratic
    }

    fn dimension(&self) -> usize {
        self.mu.len()
    }

    fn num_points(&self) -> usize {
        0
    }

    fn value(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<f64> {
        check_inputs(self, theta, batch)?;
        let d = self.offset(theta);
        check_finite(0.5 * d.dot(&(&self.a * &d)), "loss")
    }

    fn gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        let g = &self.a * self.offset(theta);
        Ok(ParamVector::from_vec(g.as_slice().to_vec()))
    }

    fn conjugate(&self) -> Option<super::Conjugate<'_>> {
        Some(super::Conjugate::Quadratic(self))
    }

    fn hessian_vector_product(&self, theta: &ParamVector, v: &[f64], batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        crate::error::check_dim(self.dimension(), v.len())?;
        let hv = &self.a * DVector::from_column_slice(v);
        Ok(ParamVector::from_vec(hv.as_slice().to_vec()))
    }
}
