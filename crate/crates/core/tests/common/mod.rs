#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sgdvi::data::{make_synthetic_regression, SyntheticSpec, TargetFunction, Targets};
use sgdvi::model::{Activation, BayesLinearRegression, Mlp, MlpTask, Quadratic};
use sgdvi::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_symmetric(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, normal_vec(rng, d * d));
    (&g + g.transpose()) * 0.5
}

/// Random SPD matrix with eigenvalues spread over `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = DMatrix::from_vec(d, d, normal_vec(rng, d * d)).qr().q();
    let eig: Vec<f64> = (0..d).map(|i| lo + (hi - lo) * i as f64 / (d.max(2) - 1) as f64).collect();
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn quadratic(seed: u64, d: usize) -> Quadratic {
    let mut r = rng(seed);
    let a = random_spd(&mut r, d, 0.2, 3.0);
    let mu = DVector::from_vec(normal_vec(&mut r, d));
    Quadratic::new(a, mu).unwrap()
}

pub fn linear_data(seed: u64, n: usize, f: usize, noise: f64) -> Arc<Dataset> {
    Arc::new(
        make_synthetic_regression(&SyntheticSpec {
            seed,
            n,
            features: f,
            noise_sigma: noise,
            target: TargetFunction::RandomLinear,
        })
        .unwrap(),
    )
}

pub fn blr(seed: u64, n: usize, f: usize, noise: f64) -> BayesLinearRegression {
    BayesLinearRegression::new(linear_data(seed, n, f, noise), noise).unwrap()
}

pub fn mlp_regression(seed: u64, n: usize, hidden: usize, activation: Activation) -> Mlp {
    let data = make_synthetic_regression(&SyntheticSpec {
        seed,
        n,
        features: 2,
        noise_sigma: 0.1,
        target: TargetFunction::Sine { frequency: 1.5 },
    })
    .unwrap();
    Mlp::new(Arc::new(data), hidden, activation, MlpTask::Regression { noise_sigma: 0.3 }).unwrap()
}

pub fn mlp_classification(seed: u64, n: usize, hidden: usize) -> Mlp {
    let mut r = rng(seed);
    let features = normal_vec(&mut r, n * 3);
    let labels = (0..n).map(|_| r.random_range(0..4)).collect();
    let data = Dataset::new(features, 3, Targets::Labels { labels, classes: 4 }).unwrap();
    Mlp::new(Arc::new(data), hidden, Activation::Tanh, MlpTask::Classification).unwrap()
}
