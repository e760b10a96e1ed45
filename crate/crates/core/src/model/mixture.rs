use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_inputs, Objective, ObjectiveKind};
use crate::batch::BatchSelector;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major symmetric positive-definite covariance.
    pub cov: [[f64; 2]; 2],
}

struct Prepared {
    log_weight: f64,
    mean: [f64; 2],
    prec: [[f64; 2]; 2],
    log_norm: f64,
}

/// Two-dimensional negative log density `-log sum_k w_k N(theta; m_k, S_k)`.
/// Data-free, used for particle visualizations.
pub struct GaussianMixture2d {
    components: Vec<Prepared>,
    spec: Vec<MixtureComponent>,
}

impl std::fmt::Debug for GaussianMixture2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianMixture2d").field("components", &self.spec).finish()
    }
}

impl GaussianMixture2d {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let mut prepared = Vec::with_capacity(components.len());
        for c in &components {
            let [[a, b], [b2, d]] = c.cov;
            let det = a * d - b * b2;
            if !(c.weight > 0.0) || (b - b2).abs() > 1e-12 || !(a > 0.0) || !(det > 0.0) {
                return Err(Error::Config(format!("invalid mixture component {c:?}")));
            }
            prepared.push(Prepared {
                log_weight: (c.weight / total).ln(),
                mean: c.mean,
                prec: [[d / det, -b / det], [-b / det, a / det]],
                log_norm: -(2.0 * PI).ln() - 0.5 * det.ln(),
            });
        }
        Ok(GaussianMixture2d {
            components: prepared,
            spec: components,
        })
    }

    /// Two tilted components, one broad and one narrow.
    pub fn default_posterior() -> Self {
        GaussianMixture2d::new(vec![
            MixtureComponent {
                weight: 0.6,
                mean: [1.0, 0.5],
                cov: [[0.6, 0.35], [0.35, 0.4]],
            },
            MixtureComponent {
                weight: 0.4,
                mean: [-1.2, -0.6],
                cov: [[0.25, -0.1], [-0.1, 0.5]],
            },
        ])
        .expect("valid built-in mixture")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.spec
    }

    /// Responsibilities, per-component `g_k = P_k (theta - m_k)` and the
    /// log density.
    fn terms(&self, th: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>, f64) {
        let mut logs = Vec::with_capacity(self.components.len());
        let mut gs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let dx = [th[0] - c.mean[0], th[1] - c.mean[1]];
            let g = [
                c.prec[0][0] * dx[0] + c.prec[0][1] * dx[1],
                c.prec[1][0] * dx[0] + c.prec[1][1] * dx[1],
            ];
            let quad = dx[0] * g[0] + dx[1] * g[1];
            logs.push(c.log_weight + c.log_norm - 0.5 * quad);
            gs.push(g);
        }
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
        let lse = mx + sum.ln();
        let resp = logs.iter().map(|l| (l - lse).exp()).collect();
        (resp, gs, lse)
    }
}

impl Objective for GaussianMixture2d {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::GaussianMixture2d
    }

    fn dimension(&self) -> usize {
        2
    }

    fn num_points(&self) -> usize {
        0
    }

    fn value(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<f64> {
        check_inputs(self, theta, batch)?;
        let (_, _, lse) = self.terms(theta);
        check_finite(-lse, "loss")
    }

    fn gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        let (r, gs, _) = self.terms(theta);
        let mut out = [0.0; 2];
        for (rk, g) in r.iter().zip(&gs) {
            out[0] += rk * g[0];
            out[1] += rk * g[1];
        }
        Ok(ParamVector::from_vec(out.to_vec()))
    }

    // H = sum_k r_k P_k - sum_k r_k g_k g_k^T + gbar gbar^T
    fn hessian_vector_product(&self, theta: &ParamVector, v: &[f64], batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        check_dim(2, v.len())?;
        let (r, gs, _) = self.terms(theta);
        let mut gbar = [0.0; 2];
        let mut out = [0.0; 2];
        for ((rk, g), c) in r.iter().zip(&gs).zip(&self.components) {
            gbar[0] += rk * g[0];
            gbar[1] += rk * g[1];
            let gv = g[0] * v[0] + g[1] * v[1];
            for i in 0..2 {
                out[i] += rk * (c.prec[i][0] * v[0] + c.prec[i][1] * v[1]) - rk * g[i] * gv;
            }
        }
        let gbv = gbar[0] * v[0] + gbar[1] * v[1];
        out[0] += gbar[0] * gbv;
        out[1] += gbar[1] * gbv;
        Ok(ParamVector::from_vec(out.to_vec()))
    }
}
