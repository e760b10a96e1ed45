//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criterion numbers may be passed as arguments to
//! run a subset, e.g. `cargo test --release --test acceptance -- 1 9`.
//!
//! The timing criterion runs first and alone so that nothing else competes
//! for the CPU while it is measured.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sgdvi::data::{load_idx, make_synthetic_regression, SyntheticSpec, TargetFunction, Targets};
use sgdvi::entropy::{exact_logdet_step, taylor_logdet_lower_bound, taylor_probe};
use sgdvi::model::{Activation, BayesLinearRegression, Mlp, MlpTask, Quadratic};
use sgdvi::optimizer::{run_training, sgd_step, EntropyLedger, StepSettings};
use sgdvi::{BatchSelector, EstimatorMode, Objective, ParamVector, RunConfig, StepJacobianSpec};
use sgdvi_experiments::{replay, run_command, Command, CurveFile, ExperimentSpec};

type Check = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn symmetric(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, normals(r, d * d));
    (&g + g.transpose()) * 0.5
}

fn spd(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, normals(r, d * d));
    &g * g.transpose() + DMatrix::identity(d, d) * 0.1
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn spec(config: &str, overrides: &[String]) -> ExperimentSpec {
    let path = repo().join("configs").join(config);
    let mut o = vec![
        format!("data.images=\"{}\"", repo().join("data/mnist/images-idx3-ubyte.gz").display()),
        format!("data.labels=\"{}\"", repo().join("data/mnist/labels-idx1-ubyte.gz").display()),
    ];
    o.extend_from_slice(overrides);
    ExperimentSpec::load(Some(&path), &o).expect("config loads")
}

/// 1. Quadratic, exact estimator: ledger entropy against the Gaussian
/// pushforward entropy at every iteration.
fn affine_gaussian_exactness() -> Check {
    let mut r = rng(1);
    let a = spd(&mut r, 5);
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let alpha = 0.45 / eig.max();
    let q = Quadratic::new(a, DVector::from_vec(normals(&mut r, 5))).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        alpha,
        sigma0: 1.0,
        steps: 1000,
        estimator: EstimatorMode::Exact,
        ..Default::default()
    };
    let trace = run_training(&q, &cfg, None).map_err(|e| e.to_string())?;
    // q_t = N(M^t mu_0, sigma0^2 M^2t), M = I - alpha A
    let s0 = 2.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let log_det_m: f64 = eig.iter().map(|l| (1.0 - alpha * l).abs().ln()).sum();
    let mut worst = 0.0f64;
    for rec in &trace.records {
        worst = worst.max((rec.entropy - (s0 + rec.t as f64 * log_det_m)).abs());
    }
    let msg = format!("alpha*lambda_max = 0.45, max |dS| over 1001 iterates = {worst:.2e} nats (tol 1e-8)");
    if trace.records.len() == 1001 && worst < 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 2. Probe output against `-alpha r'Hr - alpha^2 r'H^2 r`.
fn probe_identity() -> Check {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let d = 1 + (k * 7) % 50;
        let h = symmetric(&mut r, d);
        let alpha = 0.3 / SymmetricEigen::new(h.clone()).eigenvalues.amax();
        let r0 = normals(&mut r, d);
        let rv = DVector::from_column_slice(&r0);
        let hr = &h * &rv;
        let want = -alpha * rv.dot(&hr) - alpha * alpha * hr.dot(&hr);
        let got = taylor_probe(&r0, &StepJacobianSpec::plain(alpha), |v| {
            Ok((&h * DVector::from_column_slice(v)).as_slice().to_vec())
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs() / want.abs());
    }
    let msg = format!("100 matrices, D <= 50, max relative error {worst:.2e} (tol 1e-8)");
    if worst < 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 3. Probe mean against the dense trace expression.
fn hutchinson_unbiasedness() -> Check {
    let mut r = rng(3);
    let h = symmetric(&mut r, 10);
    let alpha = 0.45 / SymmetricEigen::new(h.clone()).eigenvalues.amax();
    let want = -alpha * h.trace() - alpha * alpha * (&h * &h).trace();
    let q = Quadratic::new(h, DVector::zeros(10)).map_err(|e| e.to_string())?;
    let theta = ParamVector::zeros(10);
    let batch = q.full_batch();
    let spec = StepJacobianSpec::plain(alpha);
    let mut probe_rng = rng(33);
    let samples = (0..100_000)
        .map(|_| taylor_logdet_lower_bound(&q, &theta, &batch, &spec, &mut probe_rng, 1, None).map(|d| d.value))
        .collect::<sgdvi::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let (m, se) = mean_se(&samples);
    let z = (m - want).abs() / se;
    let msg = format!("10^5 probes: mean {m:.5}, oracle {want:.5}, |diff| = {z:.2} SE (tol 3)");
    if z < 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 4. Taylor expression below the exact log-determinant for
/// `|alpha lambda_i| < 0.68`.
fn taylor_direction() -> Check {
    let mut r = rng(4);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for k in 0..1000 {
        let d = 2 + k % 40;
        let h = symmetric(&mut r, d);
        let lam = SymmetricEigen::new(h.clone()).eigenvalues.amax();
        let alpha = r.random_range(0.05..0.6799) / lam;
        let taylor = -alpha * h.trace() - alpha * alpha * (&h * &h).trace();
        let exact = exact_logdet_step(&h, &StepJacobianSpec::plain(alpha))
            .map_err(|e| e.to_string())?
            .value;
        if taylor > exact {
            violations += 1;
        }
        tightest = tightest.min(exact - taylor);
    }
    let msg = format!("1000 matrices, {violations} violations, smallest gap {tightest:.3e}");
    if violations == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 5. Mean bound below the conjugate evidence at every iteration.
fn evidence_inequality() -> Check {
    let (n, f, noise, sp) = (20, 3, 0.5, 1.0);
    let data = make_synthetic_regression(&SyntheticSpec {
        seed: 5,
        n,
        features: f,
        noise_sigma: noise,
        target: TargetFunction::RandomLinear,
    })
    .map_err(|e| e.to_string())?;
    let x = DMatrix::from_row_slice(n, f, data.features());
    let y = match data.targets() {
        Targets::Regression { values, .. } => DVector::from_column_slice(values),
        Targets::Labels { .. } => unreachable!(),
    };
    // y ~ N(0, sp^2 X X' + noise^2 I)
    let cov = &x * x.transpose() * (sp * sp) + DMatrix::identity(n, n) * (noise * noise);
    let evidence = -0.5 * y.dot(&(cov.clone().try_inverse().unwrap() * &y))
        - 0.5 * cov.determinant().ln()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let lam = SymmetricEigen::new(x.transpose() * &x / (noise * noise)).eigenvalues.max();
    let obj = BayesLinearRegression::new(Arc::new(data), noise).map_err(|e| e.to_string())?;
    let steps = 500;
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [EstimatorMode::Exact, EstimatorMode::TaylorProbe] {
        let mut bounds = vec![Vec::with_capacity(100); steps + 1];
        for seed in 0..100 {
            let cfg = RunConfig {
                alpha: 0.3 / lam,
                sigma0: sp,
                steps,
                estimator: mode,
                seed_init: seed,
                seed_probe: seed,
                safety_check_iters: 0,
                ..Default::default()
            };
            let trace = run_training(&obj, &cfg, None).map_err(|e| e.to_string())?;
            for rec in &trace.records {
                bounds[rec.t].push(rec.bound);
            }
        }
        let mut worst_z = f64::NEG_INFINITY;
        let mut best_mean = f64::NEG_INFINITY;
        for b in &bounds {
            let (m, se) = mean_se(b);
            worst_z = worst_z.max((m - evidence) / se);
            best_mean = best_mean.max(m);
        }
        ok &= worst_z <= 3.0;
        lines.push(format!(
            "{mode:?}: max (mean - evidence)/SE = {worst_z:.2}, best mean {best_mean:.3}"
        ));
    }
    let msg = format!("log p(x) = {evidence:.3}; {}", lines.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 6. Interior bound maximum and agreement with the held-out optimum.
fn early_stopping() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut good = 0;
    let mut cells = Vec::new();
    for seed in 0..10u64 {
        let mut s = spec("small_data_mlp.toml", &[]);
        s.run.seed_init = seed;
        s.run.seed_probe = seed;
        let out = dir.path().join(format!("seed{seed}"));
        run_command(Command::Train, &s, &out).map_err(|e| e.to_string())?;
        let c = CurveFile::read(&out.join("curve.csv")).map_err(|e| e.to_string())?;
        let get = |k: &str| c.get_meta(k).and_then(|v| v.parse::<usize>().ok());
        let (tb, tt) = (get("argmax_bound_t").unwrap_or(0), get("argmax_test_t").unwrap_or(0));
        let interior = tb > 0 && tb < s.run.steps;
        let close = tb > 0 && tt > 0 && tb.max(tt) <= 3 * tb.min(tt);
        if interior && close {
            good += 1;
        }
        cells.push(format!("{tb}/{tt}"));
    }
    let msg = format!("{good}/10 runs pass (t*_bound/t*_test: {})", cells.join(" "));
    if good >= 7 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 7. Some positive gradient threshold raises the seed-averaged bound.
fn threshold_improvement() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = spec("small_data_g0_sweep.toml", &[]);
    run_command(Command::Sweep, &s, dir.path()).map_err(|e| e.to_string())?;
    let c = CurveFile::read(&dir.path().join("sweep.csv")).map_err(|e| e.to_string())?;
    let col = |n: &str| c.column(n).unwrap();
    let (x, b, se) = (col("x"), col("bound"), col("bound_se"));
    let i0 = x.iter().position(|v| *v == Some(0.0)).ok_or("grid lacks g0 = 0")?;
    let (b0, se0) = (b[i0].ok_or("g0 = 0 failed")?, se[i0].ok_or("no SE")?);
    let mut best: Option<(f64, f64)> = None;
    let mut cells = Vec::new();
    for i in 0..x.len() {
        let (Some(xi), Some(bi), Some(si)) = (x[i], b[i], se[i]) else { continue };
        if xi <= 0.0 {
            continue;
        }
        let z = (bi - b0) / (se0 * se0 + si * si).sqrt();
        cells.push(format!("g0={xi}: {:+.2} ({z:.1} SE)", bi - b0));
        if best.is_none_or(|(_, bz)| z > bz) {
            best = Some((xi, z));
        }
    }
    let msg = format!("terminal bound vs g0=0 ({b0:.2} +- {se0:.2}), 10 seeds: {}", cells.join(", "));
    match best {
        Some((_, z)) if z > 1.0 => Ok(msg),
        _ => Err(msg),
    }
}

/// 8. Bound over hidden widths on the MNIST subset peaks below 100.
fn hidden_sweep_shape() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = spec("mnist_hidden_sweep.toml", &[]);
    run_command(Command::Sweep, &s, dir.path()).map_err(|e| e.to_string())?;
    let c = CurveFile::read(&dir.path().join("sweep.csv")).map_err(|e| e.to_string())?;
    let x: Vec<f64> = c.column("x").unwrap().into_iter().map(|v| v.unwrap()).collect();
    let b: Vec<f64> = c
        .column("bound")
        .unwrap()
        .into_iter()
        .map(|v| v.unwrap_or(f64::NEG_INFINITY))
        .collect();
    let (mut arg, mut top) = (0, f64::NEG_INFINITY);
    for (i, &v) in b.iter().enumerate() {
        if v > top {
            (arg, top) = (i, v);
        }
    }
    let monotone = b.windows(2).all(|w| w[1] >= w[0]);
    let cells: Vec<String> = x.iter().zip(&b).map(|(h, v)| format!("{h}: {v:.1}")).collect();
    let msg = format!("bound by width [{}], argmax {}", cells.join(", "), x[arg]);
    if !monotone && x[arg] < 100.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// 9. Cost of a probe-mode step against a plain gradient step, D > 10^5.
fn scalability() -> Check {
    let data = load_idx(
        repo().join("data/mnist/images-idx3-ubyte.gz"),
        repo().join("data/mnist/labels-idx1-ubyte.gz"),
        Some(1000),
    )
    .map_err(|e| e.to_string())?;
    let mlp = Mlp::new(Arc::new(data), 128, Activation::Tanh, MlpTask::Classification).map_err(|e| e.to_string())?;
    let d = mlp.dimension();
    let batch = BatchSelector::new((0..256).collect(), 1000).map_err(|e| e.to_string())?;
    let mut r = rng(9);
    let theta = ParamVector::sample_gaussian(d, 0.05, &mut r);
    let alpha = 1e-4;
    let settings = StepSettings {
        alpha,
        g0: 0.0,
        estimator: EstimatorMode::TaylorProbe,
        probes: 1,
        regime_check_iters: 0,
        hessian_cap: 0,
    };
    let mut plain = Vec::new();
    let mut probe = Vec::new();
    for _ in 0..3 {
        // warm-up
        let _ = mlp.value_and_gradient(&theta, &batch);
    }
    for _ in 0..15 {
        let t = Instant::now();
        let (_, g) = mlp.value_and_gradient(&theta, &batch).map_err(|e| e.to_string())?;
        let mut next = theta.clone();
        next.axpy(-alpha, &g);
        std::hint::black_box(&next);
        plain.push(t.elapsed());

        let mut ledger = EntropyLedger::new(0.0);
        let t = Instant::now();
        let out = sgd_step(&mlp, &theta, &batch, &settings, &mut ledger, &mut r).map_err(|e| e.to_string())?;
        std::hint::black_box(&out);
        probe.push(t.elapsed());
    }
    let (p, q) = (median(plain), median(probe));
    let ratio = q.as_secs_f64() / p.as_secs_f64();
    let msg = format!(
        "D = {d}, batch 256: gradient step {:.1} ms, probe step {:.1} ms, ratio {ratio:.2} (tol 10)",
        p.as_secs_f64() * 1e3,
        q.as_secs_f64() * 1e3
    );
    if d >= 100_000 && ratio <= 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 10. Replaying every command from its echoed config reproduces its files.
fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = [
        "run.steps=60".to_string(),
        "data.test_n=200".to_string(),
        "sweep.repeats=2".to_string(),
        "sweep.values=[0.0, 1.0]".to_string(),
        "ensemble.members=3".to_string(),
    ];
    let mixture = [
        "model.kind=\"mixture\"".to_string(),
        "data.source=\"none\"".to_string(),
        "run.alpha=0.05".to_string(),
        "run.steps=40".to_string(),
        "particles.count=50".to_string(),
        "particles.stride=10".to_string(),
        "particles.thresholds=[0.0, 0.5]".to_string(),
    ];
    let cases: Vec<(Command, ExperimentSpec)> = vec![
        (Command::Train, spec("small_data_mlp.toml", &small)),
        (Command::Sweep, spec("small_data_g0_sweep.toml", &small)),
        (Command::Ensemble, spec("small_data_mlp.toml", &small)),
        (Command::Particles2d, ExperimentSpec::load(None, &mixture).unwrap()),
    ];
    let mut compared = 0;
    for (k, (cmd, s)) in cases.iter().enumerate() {
        let a = dir.path().join(format!("{k}a"));
        let b = dir.path().join(format!("{k}b"));
        let files = run_command(*cmd, s, &a).map_err(|e| e.to_string())?;
        let curve = files.iter().find(|f| f.extension().is_some_and(|e| e == "csv")).unwrap();
        let replayed = replay(curve, &b).map_err(|e| e.to_string())?;
        if replayed.len() != files.len() {
            return Err(format!("{}: replay wrote {} files, first run {}", cmd.name(), replayed.len(), files.len()));
        }
        for (x, y) in files.iter().zip(&replayed) {
            let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            if bx != by {
                return Err(format!("{} differs from {}", y.display(), x.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} files from train, sweep, ensemble, particles2d replayed byte-identical"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 9, name: "scalability", budget: Duration::from_secs(120), run: scalability },
        Criterion { id: 1, name: "affine-Gaussian exactness", budget: Duration::from_secs(5), run: affine_gaussian_exactness },
        Criterion { id: 2, name: "probe identity", budget: Duration::from_secs(5), run: probe_identity },
        Criterion { id: 3, name: "probe unbiasedness", budget: Duration::from_secs(30), run: hutchinson_unbiasedness },
        Criterion { id: 4, name: "Taylor bound direction", budget: Duration::from_secs(30), run: taylor_direction },
        Criterion { id: 5, name: "evidence inequality", budget: Duration::from_secs(120), run: evidence_inequality },
        Criterion { id: 6, name: "early-stopping phenomenon", budget: Duration::from_secs(300), run: early_stopping },
        Criterion { id: 7, name: "threshold improvement", budget: Duration::from_secs(600), run: threshold_improvement },
        Criterion { id: 8, name: "hidden-unit sweep shape", budget: Duration::from_secs(1800), run: hidden_sweep_shape },
        Criterion { id: 10, name: "determinism", budget: Duration::from_secs(600), run: determinism },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed < c.budget;
        let (pass, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {}: {}; {:.1} s (budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
