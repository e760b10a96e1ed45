//! Per-step entropy change of the SGD map `theta -> theta - alpha * g'(theta)`.
//!
//! The step Jacobian is `J = I - alpha * diag(w) * H` (with `w = 1` for plain
//! SGD) and the entropy changes by `log |det J|`. Two estimators:
//!
//! * [`exact_logdet_step`]: dense LU factorization, `O(D^3)`.
//! * [`taylor_logdet_lower_bound`]: one or more random probes, two
//!   Hessian-vector products each. Its expectation
//!   `-alpha tr(M) - alpha^2 tr(M^2)` (with `M = diag(w) H`) lower-bounds
//!   `log |det J|` while every `alpha * lambda_i < 0.68`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::BatchSelector;
use crate::error::{check_dim, Error, Result};
use crate::model::Objective;
use crate::params::{dot, ParamVector};
use crate::rng::{seeded, Stream};

/// Largest `alpha * lambda` for which `log(1 - x) >= -x - x^2`.
pub const TAYLOR_VALID_LIMIT: f64 = 0.68;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    Exact,
    #[default]
    TaylorProbe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepJacobianSpec {
    pub alpha: f64,
    /// Per-parameter gradient-warp derivatives in `[0, 1]`; `None` means all ones.
    pub warp_weights: Option<Vec<f64>>,
}

impl StepJacobianSpec {
    pub fn plain(alpha: f64) -> Self {
        StepJacobianSpec {
            alpha,
            warp_weights: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("step size must be non-negative, got {}", self.alpha)));
        }
        if let Some(w) = &self.warp_weights {
            check_dim(dim, w.len())?;
            if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config("warp weights must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// `v <- diag(w) v`
    fn warp(&self, v: &mut [f64]) {
        if let Some(w) = &self.warp_weights {
            for (x, wi) in v.iter_mut().zip(w) {
                *x *= wi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyDelta {
    /// Nats.
    pub value: f64,
    pub mode: EstimatorMode,
    pub probes_used: usize,
    /// False only when a spectral check ran and found `alpha * |lambda|_max >= 0.68`.
    pub regime_ok: bool,
}

impl EntropyDelta {
    pub fn zero(mode: EstimatorMode) -> Self {
        EntropyDelta {
            value: 0.0,
            mode,
            probes_used: 0,
            regime_ok: true,
        }
    }
}

/// `I - alpha * diag(w) * H`
pub fn step_jacobian(h: &DMatrix<f64>, spec: &StepJacobianSpec) -> DMatrix<f64> {
    let n = h.nrows();
    let mut j = h * (-spec.alpha);
    if let Some(w) = &spec.warp_weights {
        for (i, wi) in w.iter().enumerate() {
            j.row_mut(i).scale_mut(*wi);
        }
    }
    for i in 0..n {
        j[(i, i)] += 1.0;
    }
    j
}

/// `log |det(I - alpha diag(w) H)|` by LU with partial pivoting.
pub fn exact_logdet_step(h: &DMatrix<f64>, spec: &StepJacobianSpec) -> Result<EntropyDelta> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: h.ncols(),
        });
    }
    spec.validate(h.nrows())?;
    let j = step_jacobian(h, spec);
    let n = j.nrows();
    let tol = f64::EPSILON * n.max(1) as f64 * j.amax();
    let u = j.lu().u();
    let mut value = 0.0;
    let mut min_pivot = f64::INFINITY;
    for i in 0..n {
        let p = u[(i, i)].abs();
        min_pivot = min_pivot.min(p);
        value += p.ln();
    }
    if n > 0 && min_pivot <= tol {
        return Err(Error::SingularJacobian { min_pivot });
    }
    Ok(EntropyDelta {
        value,
        mode: EstimatorMode::Exact,
        probes_used: 0,
        regime_ok: true,
    })
}

/// One probe of the linear-time estimator: with `r1 = r0 - alpha M r0` and
/// `r2 = r1 - alpha M r1`, returns `r0 . (-2 r0 + 3 r1 - r2)`.
///
/// The combination is accumulated from the increments `r1 - r0` and
/// `r2 - r1` rather than from `r1`, `r2` themselves, which avoids cancelling
/// `O(|r0|^2)` terms when `alpha` is small.
pub fn taylor_probe<F>(r0: &[f64], spec: &StepJacobianSpec, mut hvp: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut d1 = hvp(r0)?;
    check_dim(r0.len(), d1.len())?;
    spec.warp(&mut d1);
    for x in &mut d1 {
        *x *= -spec.alpha;
    }
    let r1: Vec<f64> = r0.iter().zip(&d1).map(|(a, b)| a + b).collect();
    let mut d2 = hvp(&r1)?;
    check_dim(r0.len(), d2.len())?;
    spec.warp(&mut d2);
    for x in &mut d2 {
        *x *= -spec.alpha;
    }
    // -2 r0 + 3 r1 - r2 = 2 d1 - d2
    let comb: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 2.0 * a - b).collect();
    Ok(dot(r0, &comb))
}

/// Averages `probes` standard-normal probes of [`taylor_probe`] using
/// objective HVPs. With `spectral_check_iters = Some(k)` a `k`-step power
/// iteration on `diag(w) H` sets `regime_ok`.
#[allow(clippy::too_many_arguments)]
pub fn taylor_logdet_lower_bound<R: Rng + ?Sized>(
    obj: &(impl Objective + ?Sized),
    theta: &ParamVector,
    batch: &BatchSelector,
    spec: &StepJacobianSpec,
    rng: &mut R,
    probes: usize,
    spectral_check_iters: Option<usize>,
) -> Result<EntropyDelta> {
    let d = obj.dimension();
    spec.validate(d)?;
    let probes = probes.max(1);
    let mut sum = 0.0;
    for _ in 0..probes {
        let r0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        sum += taylor_probe(&r0, spec, |v| obj.hessian_vector_product(theta, v, batch).map(ParamVector::into_vec))?;
    }
    let regime_ok = match spectral_check_iters {
        Some(iters) => {
            let lam = power_iteration(d, iters, |v| {
                let mut hv = obj.hessian_vector_product(theta, v, batch)?.into_vec();
                spec.warp(&mut hv);
                Ok(hv)
            })?;
            spec.alpha * lam < TAYLOR_VALID_LIMIT
        }
        None => true,
    };
    Ok(EntropyDelta {
        value: sum / probes as f64,
        mode: EstimatorMode::TaylorProbe,
        probes_used: probes,
        regime_ok,
    })
}

/// Whether `-alpha tr(H) - alpha^2 tr(H^2) <= log |det(I - alpha H)|` for a
/// symmetric `H`, evaluated through its eigenvalues.
pub fn taylor_bound_direction_check(h: &DMatrix<f64>, alpha: f64) -> bool {
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let lower: f64 = eig.iter().map(|l| -alpha * l - (alpha * l).powi(2)).sum();
    let exact: f64 = eig.iter().map(|l| (1.0 - alpha * l).abs().ln()).sum();
    lower <= exact
}

/// `|lambda|_max` of the batch Hessian by power iteration on HVPs.
pub fn lambda_max_estimate(obj: &(impl Objective + ?Sized), theta: &ParamVector, batch: &BatchSelector, iters: usize) -> Result<f64> {
    power_iteration(obj.dimension(), iters.max(1), |v| {
        obj.hessian_vector_product(theta, v, batch).map(ParamVector::into_vec)
    })
}

/// Power iteration for the largest-magnitude eigenvalue of a linear
/// operator, returning `|A v|` for the final unit iterate. Starts from a
/// fixed pseudo-random vector.
pub fn power_iteration<F>(dim: usize, iters: usize, mut apply: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Ok(0.0);
    }
    let mut rng = seeded(0x5eed, Stream::Power);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n0 = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n0);
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let w = apply(&v)?;
        let norm = dot(&w, &w).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { what: "power iteration" });
        }
        est = norm;
        if norm == 0.0 {
            break;
        }
        v = w.into_iter().map(|x| x / norm).collect();
    }
    Ok(est)
}
