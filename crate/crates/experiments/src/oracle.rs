//! Built-in comparisons of the estimators against independent references.
//! A check passes when its error is strictly below its tolerance, so a
//! tolerance scale of 0 fails everything.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use sgdvi::bound::{analytic_pushforward_covariance, analytic_pushforward_entropy};
use sgdvi::data::{make_synthetic_regression, SyntheticSpec, TargetFunction, Targets};
use sgdvi::entropy::{exact_logdet_step, taylor_bound_direction_check, taylor_probe};
use sgdvi::model::{Activation, BayesLinearRegression, Mlp, MlpTask, Quadratic};
use sgdvi::optimizer::{run_ensemble, run_training};
use sgdvi::{analytic_evidence, EstimatorMode, GaussianPrior, Objective, ParamVector, RunConfig, StepJacobianSpec};

use crate::spec::ExperimentSpec;
use crate::CliError;

type Rng64 = rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub name: &'static str,
    pub value: f64,
    pub reference: f64,
    pub error: f64,
    pub tolerance: f64,
    pub mc_se: Option<f64>,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn normals(rng: &mut Rng64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sym(rng: &mut Rng64, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, normals(rng, d * d));
    (&g + g.transpose()) * 0.5
}

fn spd(rng: &mut Rng64, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = DMatrix::from_vec(d, d, normals(rng, d * d)).qr().q();
    let eig = DVector::from_fn(d, |i, _| lo + (hi - lo) * i as f64 / (d.max(2) - 1) as f64);
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

fn apply(h: &DMatrix<f64>) -> impl FnMut(&[f64]) -> sgdvi::Result<Vec<f64>> + '_ {
    move |v| Ok((h * DVector::from_column_slice(v)).as_slice().to_vec())
}

/// `log mean exp(x)` and its delta-method standard error.
fn log_mean_exp(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (m + mean.ln(), (var / n).sqrt() / mean)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn run_oracles(seed: u64, mc_samples: usize, scale: f64) -> Result<Vec<OracleResult>, CliError> {
    let mut out = Vec::new();
    let mut rng = Rng64::seed_from_u64(seed);
    let mc = mc_samples.max(100);

    // Exact per-step log-determinant against nalgebra's determinant.
    {
        let h = sym(&mut rng, 8);
        let lam = SymmetricEigen::new(h.clone()).eigenvalues.amax();
        let alpha = 0.4 / lam;
        let got = exact_logdet_step(&h, &StepJacobianSpec::plain(alpha))?.value;
        let want = (DMatrix::identity(8, 8) - &h * alpha).determinant().abs().ln();
        out.push(OracleResult {
            name: "exact-logdet-vs-determinant",
            value: got,
            reference: want,
            error: (got - want).abs(),
            tolerance: 1e-10 * scale,
            mc_se: None,
        });
    }

    // Probe output against -alpha r'Hr - alpha^2 r'H^2 r.
    {
        let mut worst = (0.0, 0.0, 0.0);
        for k in 0..100 {
            let d = 1 + k % 50;
            let h = sym(&mut rng, d);
            let r0 = normals(&mut rng, d);
            let rv = DVector::from_column_slice(&r0);
            let hr = &h * &rv;
            let alpha = 0.1;
            let want = -alpha * rv.dot(&hr) - alpha * alpha * hr.dot(&hr);
            let got = taylor_probe(&r0, &StepJacobianSpec::plain(alpha), apply(&h))?;
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            if rel >= worst.2 {
                worst = (got, want, rel);
            }
        }
        out.push(OracleResult {
            name: "probe-identity",
            value: worst.0,
            reference: worst.1,
            error: worst.2,
            tolerance: 1e-8 * scale,
            mc_se: None,
        });
    }

    // Probe mean against the trace expression.
    {
        let h = spd(&mut rng, 10, -1.0, 2.0);
        let alpha = 0.2;
        let want = -alpha * h.trace() - alpha * alpha * (&h * &h).trace();
        let spec = StepJacobianSpec::plain(alpha);
        let samples = (0..mc)
            .map(|_| taylor_probe(&normals(&mut rng, 10), &spec, apply(&h)))
            .collect::<sgdvi::Result<Vec<_>>>()?;
        let (m, se) = mean_se(&samples);
        out.push(OracleResult {
            name: "probe-unbiasedness",
            value: m,
            reference: want,
            error: (m - want).abs(),
            tolerance: 3.0 * se * scale,
            mc_se: Some(se),
        });
    }

    // Taylor expression below the log-determinant inside the validity region.
    {
        let mut violations = 0usize;
        for _ in 0..1000 {
            let d = 2 + rng.random_range(0..30usize);
            let h = sym(&mut rng, d);
            let lam = SymmetricEigen::new(h.clone()).eigenvalues.amax();
            let alpha = 0.679 * rng.random_range(0.01..1.0) / lam;
            if !taylor_bound_direction_check(&h, alpha) {
                violations += 1;
            }
        }
        out.push(OracleResult {
            name: "taylor-direction",
            value: violations as f64,
            reference: 0.0,
            error: violations as f64,
            tolerance: 1.0 * scale,
            mc_se: None,
        });
    }

    // Linear-regression evidence against prior sampling.
    {
        let (noise, sp) = (1.0, 0.8);
        let data = make_synthetic_regression(&SyntheticSpec {
            seed,
            n: 6,
            features: 2,
            noise_sigma: noise,
            target: TargetFunction::RandomLinear,
        })?;
        let y = match data.targets() {
            Targets::Regression { values, .. } => values.clone(),
            Targets::Labels { .. } => unreachable!(),
        };
        let lls: Vec<f64> = (0..mc)
            .map(|_| {
                let w = [sp * rng.sample::<f64, _>(StandardNormal), sp * rng.sample::<f64, _>(StandardNormal)];
                (0..data.len())
                    .map(|i| {
                        let x = data.row(i);
                        let r = y[i] - x[0] * w[0] - x[1] * w[1];
                        -0.5 * r * r / (noise * noise) - 0.5 * (2.0 * std::f64::consts::PI * noise * noise).ln()
                    })
                    .sum()
            })
            .collect();
        let (est, se) = log_mean_exp(&lls);
        let m = BayesLinearRegression::new(Arc::new(data), noise)?;
        let want = analytic_evidence(&m, &GaussianPrior::new(sp)?)?.log_evidence;
        out.push(OracleResult {
            name: "linear-evidence-vs-sampling",
            value: est,
            reference: want,
            error: (est - want).abs(),
            tolerance: 4.0 * se * scale,
            mc_se: Some(se),
        });
    }

    // Quadratic evidence against prior sampling.
    {
        let a = spd(&mut rng, 3, 0.2, 1.5);
        let mu = DVector::from_vec(normals(&mut rng, 3));
        let s = 0.9;
        let lls: Vec<f64> = (0..mc)
            .map(|_| {
                let th = DVector::from_vec(normals(&mut rng, 3)) * s - &mu;
                -0.5 * th.dot(&(&a * &th))
            })
            .collect();
        let (est, se) = log_mean_exp(&lls);
        let want = analytic_evidence(&Quadratic::new(a, mu)?, &GaussianPrior::new(s)?)?.log_evidence;
        out.push(OracleResult {
            name: "quadratic-evidence-vs-sampling",
            value: est,
            reference: want,
            error: (est - want).abs(),
            tolerance: 4.0 * se * scale,
            mc_se: Some(se),
        });
    }

    // Exact ledger against the Gaussian pushforward entropy.
    {
        let a = spd(&mut rng, 5, 0.3, 4.0);
        let alpha = 0.45 / 4.0;
        let q = Quadratic::new(a.clone(), DVector::from_vec(normals(&mut rng, 5)))?;
        let cfg = RunConfig {
            alpha,
            steps: 300,
            estimator: EstimatorMode::Exact,
            seed_init: seed,
            ..Default::default()
        };
        let trace = run_training(&q, &cfg, None).map_err(|f| CliError::Run(f.to_string()))?;
        let (mut worst, mut at) = (0.0f64, 0);
        for rec in &trace.records {
            let e = (rec.entropy - analytic_pushforward_entropy(&a, 1.0, alpha, rec.t)).abs();
            if e >= worst {
                worst = e;
                at = rec.t;
            }
        }
        out.push(OracleResult {
            name: "pushforward-entropy",
            value: trace.records[at].entropy,
            reference: analytic_pushforward_entropy(&a, 1.0, alpha, at),
            error: worst,
            tolerance: 1e-8 * scale,
            mc_se: None,
        });
    }

    // Ensemble covariance against the pushforward covariance, in standard errors.
    {
        let a = spd(&mut rng, 2, 0.5, 2.0);
        let q = Quadratic::new(a.clone(), DVector::zeros(2))?;
        let (k, t, alpha, s0) = (2000, 10, 0.2, 1.2);
        let cfg = RunConfig {
            alpha,
            sigma0: s0,
            steps: t,
            energy_stride: 0,
            safety_check_iters: 0,
            seed_init: seed.wrapping_mul(100_003),
            ..Default::default()
        };
        let rep = run_ensemble(&q, &cfg, k, None)?;
        let pts: Vec<DVector<f64>> = rep.traces.iter().map(|(_, t)| DVector::from_column_slice(&t.final_theta)).collect();
        let n = pts.len() as f64;
        let mean = pts.iter().fold(DVector::zeros(2), |s, p| s + p) / n;
        let cov = pts.iter().fold(DMatrix::zeros(2, 2), |s, p| s + (p - &mean) * (p - &mean).transpose()) / (n - 1.0);
        let want = analytic_pushforward_covariance(&a, s0, alpha, t);
        let mut worst = (0.0, 0.0, 0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let se = ((want[(i, i)] * want[(j, j)] + want[(i, j)].powi(2)) / n).sqrt();
                let z = (cov[(i, j)] - want[(i, j)]).abs() / se;
                if z >= worst.2 {
                    worst = (cov[(i, j)], want[(i, j)], z, se);
                }
            }
        }
        out.push(OracleResult {
            name: "pushforward-covariance",
            value: worst.0,
            reference: worst.1,
            error: worst.2,
            tolerance: 4.0 * scale,
            mc_se: Some(worst.3),
        });
    }

    // MLP Hessian-vector product against differenced gradients.
    {
        let data = make_synthetic_regression(&SyntheticSpec {
            seed,
            n: 15,
            features: 2,
            noise_sigma: 0.1,
            target: TargetFunction::Sine { frequency: 1.0 },
        })?;
        let m = Mlp::new(Arc::new(data), 6, Activation::Tanh, MlpTask::Regression { noise_sigma: 0.3 })?;
        let theta = ParamVector::from_vec(normals(&mut rng, m.dimension()));
        let v = normals(&mut rng, m.dimension());
        let b = m.full_batch();
        let hv = m.hessian_vector_product(&theta, &v, &b)?;
        let h = 1e-5;
        let (mut p, mut q) = (theta.clone(), theta.clone());
        p.axpy(h, &v);
        q.axpy(-h, &v);
        let (gp, gq) = (m.gradient(&p, &b)?, m.gradient(&q, &b)?);
        let scale_hv = hv.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        let mut worst = (0.0, 0.0, 0.0);
        for j in 0..m.dimension() {
            let fd = (gp[j] - gq[j]) / (2.0 * h);
            let e = (fd - hv[j]).abs() / scale_hv;
            if e >= worst.2 {
                worst = (hv[j], fd, e);
            }
        }
        out.push(OracleResult {
            name: "mlp-hvp-vs-differences",
            value: worst.0,
            reference: worst.1,
            error: worst.2,
            tolerance: 1e-4 * scale,
            mc_se: None,
        });
    }
    Ok(out)
}

pub fn render_report(results: &[OracleResult]) -> String {
    let mut s = String::new();
    writeln!(s, "# sgdvi-oracle-report 1").unwrap();
    writeln!(s, "# code_version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "check,value,reference,error,tolerance,mc_se,pass").unwrap();
    for r in results {
        writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{},{}",
            r.name,
            r.value,
            r.reference,
            r.error,
            r.tolerance,
            r.mc_se.map(|v| format!("{v:?}")).unwrap_or_default(),
            if r.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    s
}

pub fn oracle_check(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let o = &spec.oracle;
    if !(o.tolerance_scale >= 0.0) {
        return Err(CliError::Config("oracle.tolerance_scale must be non-negative".into()));
    }
    let results = run_oracles(o.seed, o.mc_samples, o.tolerance_scale)?;
    let text = render_report(&results);
    let path = out.join("oracle_report.csv");
    std::fs::write(&path, &text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    print!("{text}");
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(vec![path])
    } else {
        Err(CliError::Run(format!("oracle checks failed: {}", failed.join(", "))))
    }
}
