//! Differentiable objectives: batch-scaled negative log-likelihoods with
//! analytic gradients and Hessian-vector products.

mod linear;
mod mixture;
mod mlp;
mod quadratic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use linear::BayesLinearRegression;
pub use mixture::{GaussianMixture2d, MixtureComponent};
pub use mlp::{Activation, Mlp, MlpTask};
pub use quadratic::Quadratic;

use crate::batch::BatchSelector;
use crate::error::{check_dim, Error, Result};
use crate::params::ParamVector;

pub const DEFAULT_HESSIAN_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Quadratic,
    BayesLinearRegression,
    MlpRegression,
    MlpClassification,
    GaussianMixture2d,
}

/// Conjugate Gaussian models with a closed-form evidence.
pub enum Conjugate<'a> {
    Linear(&'a BayesLinearRegression),
    Quadratic(&'a Quadratic),
}

/// `L(theta, batch)`: the negative log-likelihood of a batch, scaled by
/// `N / m`. The prior is not part of the objective.
///
/// Implementations are immutable and may be shared across threads.
pub trait Objective: Send + Sync {
    fn kind(&self) -> ObjectiveKind;

    fn dimension(&self) -> usize;

    /// Number of data points the objective is bound to (0 for data-free
    /// objectives, whose only batch is `BatchSelector::full(0)`).
    fn num_points(&self) -> usize;

    fn value(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<f64>;

    fn gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<ParamVector>;

    fn value_and_gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<(f64, ParamVector)> {
        Ok((self.value(theta, batch)?, self.gradient(theta, batch)?))
    }

    /// `H(theta) v` for the batch objective.
    fn hessian_vector_product(&self, theta: &ParamVector, v: &[f64], batch: &BatchSelector) -> Result<ParamVector>;

    /// `log p(y_i | x_i, theta)` for a single bound data point.
    fn point_log_likelihood(&self, _theta: &ParamVector, _index: usize) -> Result<f64> {
        Err(Error::Unsupported(format!("{:?} has no per-point likelihood", self.kind())))
    }

    /// Closed-form structure for conjugate models, `None` otherwise.
    fn conjugate(&self) -> Option<Conjugate<'_>> {
        None
    }

    /// Full-data batch for this objective.
    fn full_batch(&self) -> BatchSelector {
        BatchSelector::full(self.num_points())
    }
}

pub(crate) fn check_inputs(obj: &(impl Objective + ?Sized), theta: &[f64], batch: &BatchSelector) -> Result<()> {
    check_dim(obj.dimension(), theta.len())?;
    batch.validate(obj.num_points())
}

/// Assembles the dense Hessian column by column from `D` HVPs and
/// symmetrizes the round-off.
pub fn dense_hessian(
    obj: &(impl Objective + ?Sized),
    theta: &ParamVector,
    batch: &BatchSelector,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let d = obj.dimension();
    if d > cap {
        return Err(Error::HessianCap { dim: d, cap });
    }
    let mut h = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = obj.hessian_vector_product(theta, &e, batch)?;
        h.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Like [`dense_hessian`] but without symmetrization, for testing symmetry.
pub fn dense_hessian_raw(obj: &(impl Objective + ?Sized), theta: &ParamVector, batch: &BatchSelector) -> Result<DMatrix<f64>> {
    let d = obj.dimension();
    let mut h = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = obj.hessian_vector_product(theta, &e, batch)?;
        h.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(h)
}
