mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sgdvi::bound::analytic_pushforward_covariance;
use sgdvi::data::{load_delimited, load_idx, make_synthetic_regression, DelimitedSchema, SyntheticSpec, TargetFunction, Targets};
use sgdvi::model::{BayesLinearRegression, Quadratic};
use sgdvi::optimizer::{member_config, run_ensemble, run_training};
use sgdvi::{BatchMode, Dataset, EstimatorMode, Objective, RunConfig};

fn data_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

#[test]
fn ensemble_matches_pushforward_covariance() {
    let mut r = rng(31);
    let a = random_spd(&mut r, 2, 0.5, 2.0);
    let q = Quadratic::new(a.clone(), DVector::from_vec(vec![0.4, -0.2])).unwrap();
    let (k, t, alpha, s0) = (4000, 15, 0.2, 1.3);
    let cfg = RunConfig {
        alpha,
        sigma0: s0,
        steps: t,
        safety_check_iters: 0,
        ..Default::default()
    };
    let report = run_ensemble(&q, &cfg, k, None).unwrap();
    assert!(report.failures.is_empty());
    let pts: Vec<DVector<f64>> = report
        .traces
        .iter()
        .map(|(_, tr)| DVector::from_column_slice(&tr.final_theta))
        .collect();
    let mean = pts.iter().fold(DVector::zeros(2), |s, p| s + p) / k as f64;
    let cov = pts
        .iter()
        .fold(DMatrix::zeros(2, 2), |s, p| s + (p - &mean) * (p - &mean).transpose())
        / (k - 1) as f64;
    let want = analytic_pushforward_covariance(&a, s0, alpha, t);
    for i in 0..2 {
        for j in 0..2 {
            let se = ((want[(i, i)] * want[(j, j)] + want[(i, j)].powi(2)) / k as f64).sqrt();
            assert!((cov[(i, j)] - want[(i, j)]).abs() < 4.0 * se, "({i},{j}) {} vs {}", cov[(i, j)], want[(i, j)]);
        }
    }
}

#[test]
fn gradient_descent_recovers_least_squares_weights() {
    let n = 2000;
    let w = vec![1.5, -0.7, 0.25];
    let data = make_synthetic_regression(&SyntheticSpec {
        seed: 32,
        n,
        features: 3,
        noise_sigma: 1.0,
        target: TargetFunction::Linear { weights: w.clone() },
    })
    .unwrap();
    let obj = BayesLinearRegression::new(Arc::new(data), 1.0).unwrap();
    let cfg = RunConfig {
        alpha: 2e-4,
        steps: 300,
        energy_stride: 0,
        ..Default::default()
    };
    let trace = run_training(&obj, &cfg, None).unwrap();
    for (got, want) in trace.final_theta.iter().zip(&w) {
        assert!((got - want).abs() < 3.0 / (n as f64).sqrt(), "{got} vs {want}");
    }
}

#[test]
fn runs_are_deterministic() {
    let obj = mlp_regression(33, 30, 6, sgdvi::model::Activation::Tanh);
    let cfg = RunConfig {
        alpha: 1e-3,
        steps: 40,
        batch_size: Some(8),
        batch_mode: BatchMode::Resampled,
        g0: 0.5,
        probes_per_step: 2,
        seed_init: 5,
        seed_batch: 6,
        seed_probe: 7,
        energy_stride: 5,
        ..Default::default()
    };
    let a = run_training(&obj, &cfg, None).unwrap();
    let b = run_training(&obj, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert!(a.records.iter().filter(|r| r.energy_full).count() == 9);

    let ens = run_ensemble(&obj, &cfg, 3, None).unwrap();
    for (k, tr) in &ens.traces {
        assert_eq!(*tr, run_training(&obj, &member_config(&cfg, *k), None).unwrap());
    }
}

#[test]
fn zero_threshold_is_plain_sgd() {
    let obj = mlp_regression(34, 20, 4, sgdvi::model::Activation::Sigmoid);
    let cfg = RunConfig {
        alpha: 1e-3,
        steps: 25,
        ..Default::default()
    };
    let plain = run_training(&obj, &cfg, None).unwrap();
    let warped = run_training(&obj, &RunConfig { g0: 0.0, ..cfg.clone() }, None).unwrap();
    assert_eq!(plain, warped);
}

#[test]
fn divergence_returns_partial_trace() {
    let q = Quadratic::new(DMatrix::from_diagonal_element(2, 2, 10.0), DVector::zeros(2)).unwrap();
    let cfg = RunConfig {
        alpha: 1.0,
        steps: 2000,
        estimator: EstimatorMode::TaylorProbe,
        ..Default::default()
    };
    let fail = run_training(&q, &cfg, None).unwrap_err();
    assert!(!fail.trace.warnings.is_empty());
    assert!(!fail.trace.records.is_empty());
    match fail.error {
        sgdvi::Error::Diverged { alpha_lambda_max, .. } => assert!(alpha_lambda_max > 1.0 || alpha_lambda_max.is_nan()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn housing_file_loads() {
    let ds = load_delimited(data_path("housing.csv"), &DelimitedSchema::default()).unwrap();
    assert_eq!(ds.len(), 506);
    assert_eq!(ds.n_features(), 13);
    let (train, test) = ds.split(0.8, 0, true).unwrap();
    assert_eq!((train.len(), test.len()), (405, 101));
}

#[test]
fn mnist_subset_loads() {
    let ds = load_idx(
        data_path("mnist/images-idx3-ubyte.gz"),
        data_path("mnist/labels-idx1-ubyte.gz"),
        Some(500),
    )
    .unwrap();
    assert_eq!(ds.len(), 500);
    assert_eq!(ds.n_features(), 784);
    match ds.targets() {
        Targets::Labels { labels, classes } => {
            assert_eq!(*classes, 10);
            for c in 0..10 {
                assert!(labels.iter().any(|&l| l == c));
            }
        }
        _ => panic!("expected labels"),
    }
    assert!(ds.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

proptest! {
    #[test]
    fn standardization_round_trips(rows in 2usize..12, cols in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let features: Vec<f64> = normal_vec(&mut r, rows * cols).iter().map(|v| 3.0 * v + 7.0).collect();
        let values = normal_vec(&mut r, rows);
        let ds = Dataset::new(features, cols, Targets::Regression { values, outputs: 1 }).unwrap();
        let norm = ds.standardization();
        let back = ds.normalized_with(&norm).unwrap().denormalized();
        for (a, b) in back.features().iter().zip(ds.features()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        match (back.targets(), ds.targets()) {
            (Targets::Regression { values: a, .. }, Targets::Regression { values: b, .. }) => {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
                }
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn fixed_sequence_batches_ignore_run_seed() {
    let obj = mlp_regression(35, 16, 3, sgdvi::model::Activation::Tanh);
    let cfg = RunConfig {
        alpha: 1e-3,
        steps: 10,
        batch_size: Some(4),
        ..Default::default()
    };
    let mut s1 = sgdvi::BatchSchedule::new(16, Some(4), BatchMode::FixedSequence, 9, 1).unwrap();
    let mut s2 = sgdvi::BatchSchedule::new(16, Some(4), BatchMode::FixedSequence, 9, 2).unwrap();
    for _ in 0..10 {
        assert_eq!(s1.next_batch().indices(), s2.next_batch().indices());
    }
    assert!(run_training(&obj, &cfg, None).is_ok());
    assert_eq!(obj.num_points(), 16);
}

#[test]
fn probe_regime_violation_is_reported_once() {
    let q = Quadratic::isotropic(3);
    let mut cfg = RunConfig {
        alpha: 0.8,
        steps: 10,
        estimator: EstimatorMode::TaylorProbe,
        regime_check_iters: 10,
        ..Default::default()
    };
    let trace = run_training(&q, &cfg, None).unwrap();
    assert_eq!(trace.warnings.iter().filter(|w| w.contains("probe estimate")).count(), 1);
    cfg.alpha = 0.5;
    assert!(run_training(&q, &cfg, None).unwrap().warnings.is_empty());
}
