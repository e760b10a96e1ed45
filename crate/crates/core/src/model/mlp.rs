//! One-hidden-layer perceptron with analytic backprop and an R-operator
//! (forward-over-reverse) Hessian-vector product.
//!
//! Parameter layout: `[W1 (H x F, row-major) | b1 (H) | W2 (O x H, row-major) | b2 (O)]`.
//! Row-major `W1` is the same memory as column-major `W1^T`, so the
//! weights are used as `F x H` / `H x O` nalgebra views without copying.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use super::{check_inputs, Objective, ObjectiveKind};
use crate::batch::BatchSelector;
use crate::data::{Dataset, Targets};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    /// `(phi(a), phi'(a), phi''(a))`
    #[inline]
    fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-a).exp());
                let d1 = s * (1.0 - s);
                (s, d1, d1 * (1.0 - 2.0 * s))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MlpTask {
    /// Gaussian output likelihood with fixed noise.
    Regression { noise_sigma: f64 },
    /// Softmax cross-entropy over the dataset's classes.
    Classification,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    data: Arc<Dataset>,
    x_full: DMatrix<f64>,
    hidden: usize,
    activation: Activation,
    task: MlpTask,
}

struct Forward<'a> {
    x: Cow<'a, DMatrix<f64>>,
    /// phi(A), phi'(A), phi''(A), each m x H
    h: DMatrix<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    z: DMatrix<f64>,
}

struct Views<'a> {
    w1t: DMatrixView<'a, f64>,
    b1: &'a [f64],
    w2t: DMatrixView<'a, f64>,
    b2: &'a [f64],
}

impl Mlp {
    pub fn new(data: Arc<Dataset>, hidden: usize, activation: Activation, task: MlpTask) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden layer width must be at least 1".into()));
        }
        match (task, data.targets()) {
            (MlpTask::Regression { noise_sigma }, Targets::Regression { .. }) => {
                if !(noise_sigma > 0.0) {
                    return Err(Error::Config(format!("noise sigma must be positive, got {noise_sigma}")));
                }
            }
            (MlpTask::Classification, Targets::Labels { .. }) => {}
            _ => return Err(Error::Config("MLP task does not match dataset targets".into())),
        }
        let (n, f) = (data.len(), data.n_features());
        let x_full = DMatrix::from_row_slice(n, f, data.features());
        Ok(Mlp {
            data,
            x_full,
            hidden,
            activation,
            task,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Parameter count for the given layer sizes.
    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    fn sizes(&self) -> (usize, usize, usize) {
        (self.data.n_features(), self.hidden, self.data.n_outputs())
    }

    fn views<'a>(&self, p: &'a [f64]) -> Views<'a> {
        let (f, h, o) = self.sizes();
        let (w1, rest) = p.split_at(h * f);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(o * h);
        Views {
            w1t: DMatrixView::from_slice(w1, f, h),
            b1,
            w2t: DMatrixView::from_slice(w2, h, o),
            b2,
        }
    }

    fn gather<'a>(&'a self, batch: &BatchSelector) -> Cow<'a, DMatrix<f64>> {
        let idx = batch.indices();
        let is_identity = idx.len() == self.data.len() && idx.iter().enumerate().all(|(k, &i)| k == i);
        if is_identity {
            Cow::Borrowed(&self.x_full)
        } else {
            Cow::Owned(DMatrix::from_fn(idx.len(), self.data.n_features(), |r, c| self.x_full[(idx[r], c)]))
        }
    }

    fn forward<'a>(&'a self, theta: &[f64], batch: &BatchSelector) -> Forward<'a> {
        let w = self.views(theta);
        let x = self.gather(batch);
        let mut a = x.as_ref() * &w.w1t;
        add_row(&mut a, w.b1);
        let (m, hdim) = a.shape();
        let mut h = DMatrix::zeros(m, hdim);
        let mut d1 = DMatrix::zeros(m, hdim);
        let mut d2 = DMatrix::zeros(m, hdim);
        for k in 0..a.len() {
            let (p, q, r) = self.activation.eval(a[k]);
            h[k] = p;
            d1[k] = q;
            d2[k] = r;
        }
        let mut z = &h * &w.w2t;
        add_row(&mut z, w.b2);
        Forward { x, h, d1, d2, z }
    }

    /// Per-row negative log-likelihood, `dl/dz` and (if `rz` is given) the
    /// output-Hessian product `(d2l/dz2) rz`.
    fn output_terms(&self, z: &DMatrix<f64>, batch: &BatchSelector, rz: Option<&DMatrix<f64>>) -> (f64, DMatrix<f64>, Option<DMatrix<f64>>) {
        let (m, o) = z.shape();
        let mut grad = DMatrix::zeros(m, o);
        let mut hrz = rz.map(|_| DMatrix::zeros(m, o));
        let mut nll = 0.0;
        match (self.task, self.data.targets()) {
            (MlpTask::Regression { noise_sigma }, Targets::Regression { values, outputs }) => {
                let var = noise_sigma * noise_sigma;
                let log_norm = 0.5 * (2.0 * PI * var).ln();
                for (r, &i) in batch.indices().iter().enumerate() {
                    for c in 0..o {
                        let resid = z[(r, c)] - values[i * outputs + c];
                        nll += 0.5 * resid * resid / var + log_norm;
                        grad[(r, c)] = resid / var;
                    }
                }
                if let (Some(hr), Some(rz)) = (hrz.as_mut(), rz) {
                    *hr = rz / var;
                }
            }
            (MlpTask::Classification, Targets::Labels { labels, .. }) => {
                let mut p = vec![0.0; o];
                for (r, &i) in batch.indices().iter().enumerate() {
                    let mx = (0..o).map(|c| z[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for c in 0..o {
                        p[c] = (z[(r, c)] - mx).exp();
                        s += p[c];
                    }
                    let y = labels[i];
                    nll += mx + s.ln() - z[(r, y)];
                    for c in 0..o {
                        p[c] /= s;
                        grad[(r, c)] = p[c] - if c == y { 1.0 } else { 0.0 };
                    }
                    if let (Some(hr), Some(rz)) = (hrz.as_mut(), rz) {
                        let prz: f64 = (0..o).map(|c| p[c] * rz[(r, c)]).sum();
                        for c in 0..o {
                            hr[(r, c)] = p[c] * (rz[(r, c)] - prz);
                        }
                    }
                }
            }
            _ => unreachable!("task/target mismatch rejected at construction"),
        }
        (nll, grad, hrz)
    }

    fn pack(&self, w1t: &DMatrix<f64>, b1: &[f64], w2t: &DMatrix<f64>, b2: &[f64]) -> ParamVector {
        let mut out = Vec::with_capacity(self.dimension());
        out.extend_from_slice(w1t.as_slice());
        out.extend_from_slice(b1);
        out.extend_from_slice(w2t.as_slice());
        out.extend_from_slice(b2);
        ParamVector::from_vec(out)
    }

    fn backward(&self, theta: &[f64], batch: &BatchSelector) -> (f64, ParamVector) {
        let w = self.views(theta);
        let fw = self.forward(theta, batch);
        let (nll, mut gz, _) = self.output_terms(&fw.z, batch, None);
        gz *= batch.scale();
        let gw2t = fw.h.tr_mul(&gz);
        let gb2 = col_sums(&gz);
        let mut ga = &gz * w.w2t.transpose();
        ga.component_mul_assign(&fw.d1);
        let gw1t = fw.x.tr_mul(&ga);
        let gb1 = col_sums(&ga);
        (batch.scale() * nll, self.pack(&gw1t, &gb1, &gw2t, &gb2))
    }
}

fn add_row(m: &mut DMatrix<f64>, row: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(row[j]);
    }
}

fn col_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

impl Objective for Mlp {
    fn kind(&self) -> ObjectiveKind {
        match self.task {
            MlpTask::Regression { .. } => ObjectiveKind::MlpRegression,
            MlpTask::Classification => ObjectiveKind::MlpClassification,
        }
    }

    fn dimension(&self) -> usize {
        let (f, h, o) = self.sizes();
        Mlp::param_count(f, h, o)
    }

    fn num_points(&self) -> usize {
        self.data.len()
    }

    fn value(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<f64> {
        check_inputs(self, theta, batch)?;
        let fw = self.forward(theta, batch);
        let (nll, _, _) = self.output_terms(&fw.z, batch, None);
        check_finite(batch.scale() * nll, "loss")
    }

    fn gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<ParamVector> {
        Ok(self.value_and_gradient(theta, batch)?.1)
    }

    fn value_and_gradient(&self, theta: &ParamVector, batch: &BatchSelector) -> Result<(f64, ParamVector)> {
        check_inputs(self, theta, batch)?;
        let (v, g) = self.backward(theta, batch);
        check_finite(v, "loss")?;
        if !g.all_finite() {
            return Err(Error::NonFinite { what: "gradient" });
        }
        Ok((v, g))
    }

    fn hessian_vector_product(&self, theta: &ParamVector, v: &[f64], batch: &BatchSelector) -> Result<ParamVector> {
        check_inputs(self, theta, batch)?;
        check_dim(self.dimension(), v.len())?;
        let w = self.views(theta);
        let dv = self.views(v);
        let fw = self.forward(theta, batch);
        let s = batch.scale();

        // R-forward
        let mut ra = fw.x.as_ref() * &dv.w1t;
        add_row(&mut ra, dv.b1);
        let rh = ra.component_mul(&fw.d1);
        let mut rz = &rh * &w.w2t + &fw.h * &dv.w2t;
        add_row(&mut rz, dv.b2);

        let (_, mut gz, hrz) = self.output_terms(&fw.z, batch, Some(&rz));
        gz *= s;
        let mut rgz = hrz.expect("requested");
        rgz *= s;

        // R-backward
        let rgw2t = fw.h.tr_mul(&rgz) + rh.tr_mul(&gz);
        let rgb2 = col_sums(&rgz);
        let gh = &gz * w.w2t.transpose();
        let rgh = &rgz * w.w2t.transpose() + &gz * dv.w2t.transpose();
        let mut rga = fw.d2.component_mul(&ra);
        rga.component_mul_assign(&gh);
        rga += fw.d1.component_mul(&rgh);
        let rgw1t = fw.x.tr_mul(&rga);
        let rgb1 = col_sums(&rga);
        Ok(self.pack(&rgw1t, &rgb1, &rgw2t, &rgb2))
    }

    fn point_log_likelihood(&self, theta: &ParamVector, index: usize) -> Result<f64> {
        check_dim(self.dimension(), theta.len())?;
        let batch = BatchSelector::new(vec![index], self.num_points())?;
        let fw = self.forward(theta, &batch);
        let (nll, _, _) = self.output_terms(&fw.z, &batch, None);
        Ok(-nll)
    }
}
