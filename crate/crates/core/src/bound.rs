//! The variational lower bound `energy + entropy` and closed-form references
//! for conjugate Gaussian models.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::batch::BatchSelector;
use crate::data::Targets;
use crate::error::{Error, Result};
use crate::model::{BayesLinearRegression, Conjugate, Objective, ObjectiveKind, Quadratic};
use crate::optimizer::EntropyLedger;
use crate::params::{GaussianPrior, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub iteration: usize,
    /// `log p(theta_t, x)` in nats.
    pub energy: f64,
    /// `S_t` in nats.
    pub entropy: f64,
    pub bound: f64,
}

impl BoundReport {
    pub fn new(iteration: usize, energy: f64, entropy: f64) -> Self {
        BoundReport {
            iteration,
            energy,
            entropy,
            bound: energy + entropy,
        }
    }

    pub fn bound_bits(&self) -> f64 {
        self.bound / std::f64::consts::LN_2
    }
}

/// `log prior(theta) - L(theta, batch)`: the exact log joint on the full
/// batch, an unbiased estimate of it on a minibatch.
pub fn energy_estimate(
    theta: &ParamVector,
    obj: &(impl Objective + ?Sized),
    prior: &GaussianPrior,
    batch: &BatchSelector,
) -> Result<f64> {
    Ok(prior.log_density(theta) - obj.value(theta, batch)?)
}

/// Bound at iteration `t` from the ledger's entropy after `t` steps.
pub fn bound_at(t: usize, ledger: &EntropyLedger, energy: f64) -> Result<BoundReport> {
    let entropy = ledger.entropy_at(t)?;
    Ok(BoundReport::new(t, energy, entropy))
}

/// Closed-form log marginal likelihood of a conjugate model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceOracle {
    pub kind: ObjectiveKind,
    pub log_evidence: f64,
}

/// Exact `log p(x)` for Gaussian-linear models under an isotropic Gaussian
/// prior. The quadratic objective is read as the unnormalized likelihood
/// `exp(-L(theta))`.
pub fn analytic_evidence(obj: &(impl Objective + ?Sized), prior: &GaussianPrior) -> Result<EvidenceOracle> {
    let log_evidence = match obj.conjugate() {
        Some(Conjugate::Linear(m)) => linear_regression_evidence(m, prior)?,
        Some(Conjugate::Quadratic(q)) => quadratic_evidence(q, prior)?,
        None => {
            return Err(Error::Unsupported(format!(
                "no closed-form evidence for {:?}",
                obj.kind()
            )))
        }
    };
    Ok(EvidenceOracle {
        kind: obj.kind(),
        log_evidence,
    })
}

/// `y ~ N(0, sigma_p^2 X X^T + sigma_n^2 I)`
fn linear_regression_evidence(m: &BayesLinearRegression, prior: &GaussianPrior) -> Result<f64> {
    let data = m.data();
    let n = data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let x = DMatrix::from_row_slice(n, data.n_features(), data.features());
    let y = match data.targets() {
        Targets::Regression { values, .. } => DVector::from_column_slice(values),
        Targets::Labels { .. } => unreachable!(),
    };
    let sp2 = prior.sigma0().powi(2);
    let sn2 = m.noise_sigma().powi(2);
    let cov = &x * x.transpose() * sp2 + DMatrix::identity(n, n) * sn2;
    gaussian_log_density(&y, cov)
}

fn gaussian_log_density(y: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let alpha = chol.solve(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln())
}

/// `log int N(theta; 0, s^2 I) exp(-1/2 (theta-mu)^T A (theta-mu)) dtheta
///   = -1/2 log|I + s^2 A| - 1/2 mu^T (I + s^2 A)^{-1} A mu`
fn quadratic_evidence(q: &Quadratic, prior: &GaussianPrior) -> Result<f64> {
    let a = q.matrix();
    let mu = q.center();
    let d = mu.len();
    let s2 = prior.sigma0().powi(2);
    let k = DMatrix::identity(d, d) + a * s2;
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Unsupported("evidence diverges: I + sigma0^2 A is not positive definite".into()))?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let am = a * mu;
    let sol = chol.solve(&am);
    Ok(-0.5 * logdet - 0.5 * mu.dot(&sol))
}

/// Entropy of `q_t` for gradient descent on a quadratic from
/// `N(0, sigma0^2 I)`: `q_t` is Gaussian with covariance
/// `M^t sigma0^2 (M^t)^T`, `M = I - alpha A`. Evaluated through the
/// eigenvalues of `A`.
pub fn analytic_pushforward_entropy(a: &DMatrix<f64>, sigma0: f64, alpha: f64, t: usize) -> f64 {
    let d = a.nrows() as f64;
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let log_det_m: f64 = eig.iter().map(|l| (1.0 - alpha * l).abs().ln()).sum();
    // 1/2 log|2 pi e Sigma_t| with log|Sigma_t| = D log sigma0^2 + 2 t log|det M|
    0.5 * d * (2.0 * PI * E).ln() + d * sigma0.ln() + t as f64 * log_det_m
}

/// `M^t sigma0^2 (M^t)^T` by repeated multiplication.
pub fn analytic_pushforward_covariance(a: &DMatrix<f64>, sigma0: f64, alpha: f64, t: usize) -> DMatrix<f64> {
    let d = a.nrows();
    let m = DMatrix::identity(d, d) - a * alpha;
    let mut mt = DMatrix::identity(d, d);
    for _ in 0..t {
        mt = &m * mt;
    }
    &mt * mt.transpose() * sigma0.powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::params::GaussianPrior;
    use std::sync::Arc;

    #[test]
    fn pushforward_initial_matches_gaussian_entropy() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let s0 = GaussianPrior::new(0.7).unwrap().entropy(2);
        assert!((analytic_pushforward_entropy(&a, 0.7, 0.1, 0) - s0).abs() < 1e-12);
        assert!((analytic_pushforward_entropy(&a, 0.7, 0.0, 50) - s0).abs() < 1e-12);
    }

    #[test]
    fn pushforward_one_step() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let s0 = GaussianPrior::new(1.0).unwrap().entropy(2);
        let s1 = analytic_pushforward_entropy(&a, 1.0, 0.1, 1);
        assert!((s1 - (s0 + (0.9f64 * 0.8).ln())).abs() < 1e-12);
    }

    #[test]
    fn pushforward_covariance_matches_entropy() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let cov = analytic_pushforward_covariance(&a, 1.3, 0.2, 7);
        let direct = 0.5 * (2.0 * (2.0 * PI * E).ln() + cov.determinant().ln());
        assert!((direct - analytic_pushforward_entropy(&a, 1.3, 0.2, 7)).abs() < 1e-10);
    }

    #[test]
    fn empty_dataset_has_zero_evidence() {
        let ds = Arc::new(Dataset::empty_regression(2, 1));
        let m = BayesLinearRegression::new(ds, 1.0).unwrap();
        let ev = analytic_evidence(&m, &GaussianPrior::new(1.0).unwrap()).unwrap();
        assert_eq!(ev.log_evidence, 0.0);
    }

    #[test]
    fn single_point_convolution() {
        // y | w ~ N(w x, 1), w ~ N(0, 1)  =>  y ~ N(0, x^2 + 1)
        let (x, y) = (1.7, -0.4);
        let ds = Arc::new(
            Dataset::new(
                vec![x],
                1,
                Targets::Regression {
                    values: vec![y],
                    outputs: 1,
                },
            )
            .unwrap(),
        );
        let m = BayesLinearRegression::new(ds, 1.0).unwrap();
        let ev = analytic_evidence(&m, &GaussianPrior::new(1.0).unwrap()).unwrap().log_evidence;
        let var: f64 = x * x + 1.0;
        let expect = -0.5 * y * y / var - 0.5 * (2.0 * PI * var).ln();
        assert!((ev - expect).abs() < 1e-13);
    }

    #[test]
    fn unsupported_kind() {
        let mix = crate::model::GaussianMixture2d::default_posterior();
        assert!(matches!(
            analytic_evidence(&mix, &GaussianPrior::new(1.0).unwrap()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn report_bound_is_sum() {
        let r = BoundReport::new(3, -10.25, 4.5);
        assert_eq!(r.bound, -5.75);
    }
}
