//! Gradient descent with an entropy ledger.
//!
//! Each step first records `log |det J(theta_t)|` (exact or probe estimate,
//! evaluated at the pre-step point on the step's batch) and then moves
//! `theta_{t+1} = theta_t - alpha * g'(theta_t)`, where `g'` is the batch
//! gradient, optionally warped elementwise by `g - g0 tanh(g / g0)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{BatchMode, BatchSchedule, BatchSelector};
use crate::entropy::{
    exact_logdet_step, lambda_max_estimate, taylor_logdet_lower_bound, EntropyDelta, EstimatorMode, StepJacobianSpec,
    TAYLOR_VALID_LIMIT,
};
use crate::error::{Error, Result};
use crate::model::{dense_hessian, Objective, DEFAULT_HESSIAN_CAP};
use crate::params::{GaussianPrior, ParamVector};
use crate::rng::{seeded, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Step size.
    pub alpha: f64,
    /// Initializer scale; also the prior scale unless `prior_sigma` is set.
    pub sigma0: f64,
    pub prior_sigma: Option<f64>,
    /// Iteration budget `T`.
    pub steps: usize,
    /// Gradient threshold; 0 is plain SGD.
    pub g0: f64,
    /// `None` is full-batch.
    pub batch_size: Option<usize>,
    pub batch_mode: BatchMode,
    pub estimator: EstimatorMode,
    pub probes_per_step: usize,
    pub seed_init: u64,
    pub seed_batch: u64,
    pub seed_probe: u64,
    /// Full-data energy every `energy_stride` steps (always at 0 and T);
    /// other rows carry the minibatch estimate. 0 means only at 0 and T.
    pub energy_stride: usize,
    /// Store `theta_t` every `snapshot_stride` steps. The terminal point is
    /// always stored; 0 keeps only it.
    pub snapshot_stride: usize,
    /// Power iterations for the `alpha * lambda_max < 1` check at
    /// initialization; 0 disables it.
    pub safety_check_iters: usize,
    /// Power iterations per step for the probe estimator's validity flag;
    /// 0 disables it.
    pub regime_check_iters: usize,
    pub hessian_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.01,
            sigma0: 1.0,
            prior_sigma: None,
            steps: 100,
            g0: 0.0,
            batch_size: None,
            batch_mode: BatchMode::FixedSequence,
            estimator: EstimatorMode::TaylorProbe,
            probes_per_step: 1,
            seed_init: 0,
            seed_batch: 0,
            seed_probe: 0,
            energy_stride: 1,
            snapshot_stride: 0,
            safety_check_iters: 20,
            regime_check_iters: 0,
            hessian_cap: DEFAULT_HESSIAN_CAP,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if let Some(p) = self.prior_sigma {
            if !(p > 0.0 && p.is_finite()) {
                return bad(format!("prior_sigma must be positive, got {p}"));
            }
        }
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return bad(format!("g0 must be non-negative, got {}", self.g0));
        }
        if let Some(m) = self.batch_size {
            if m == 0 || (n_points > 0 && m > n_points) {
                return bad(format!("batch size must be in 1..={n_points}, got {m}"));
            }
        }
        if self.probes_per_step == 0 {
            return bad("probes_per_step must be at least 1".into());
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.prior_sigma.unwrap_or(self.sigma0))
    }

    fn initializer(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.sigma0)
    }
}

/// Running entropy `S_t = S_0 + sum_{s < t} delta_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyLedger {
    initial_entropy: f64,
    entropy: f64,
    deltas: Vec<EntropyDelta>,
}

impl EntropyLedger {
    pub fn new(initial_entropy: f64) -> Self {
        EntropyLedger {
            initial_entropy,
            entropy: initial_entropy,
            deltas: Vec::new(),
        }
    }

    pub fn push(&mut self, delta: EntropyDelta) {
        self.entropy += delta.value;
        self.deltas.push(delta);
    }

    pub fn initial_entropy(&self) -> f64 {
        self.initial_entropy
    }

    /// Entropy after all recorded steps.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    pub fn deltas(&self) -> &[EntropyDelta] {
        &self.deltas
    }

    pub fn steps(&self) -> usize {
        self.deltas.len()
    }

    /// Entropy after the first `t` steps. Summed in the same order as the
    /// running total, so `entropy_at(steps())` equals `entropy()` exactly.
    pub fn entropy_at(&self, t: usize) -> Result<f64> {
        if t > self.deltas.len() {
            return Err(Error::Config(format!(
                "ledger has {} steps, asked for entropy after {t}",
                self.deltas.len()
            )));
        }
        Ok(self.deltas[..t].iter().fold(self.initial_entropy, |s, d| s + d.value))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Negative log-likelihood used for the energy (full data when
    /// `energy_full`, otherwise the batch-scaled estimate).
    pub train_nll: f64,
    pub energy: f64,
    pub energy_full: bool,
    pub entropy: f64,
    pub bound: f64,
    /// Mean per-point held-out log-likelihood, on full-energy rows.
    pub test_log_lik: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    pub ledger: EntropyLedger,
    pub final_theta: ParamVector,
    pub snapshots: Vec<(usize, ParamVector)>,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    /// Iteration of the largest bound (first one on ties) among full-energy rows.
    pub fn argmax_bound(&self) -> Option<usize> {
        argmax(self.records.iter().filter(|r| r.energy_full).map(|r| (r.t, r.bound)))
    }

    pub fn argmax_test(&self) -> Option<usize> {
        argmax(self.records.iter().filter_map(|r| r.test_log_lik.map(|v| (r.t, v))))
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace always holds the initial row")
    }
}

fn argmax(it: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (t, v) in it {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((t, v));
        }
    }
    best.map(|(t, _)| t)
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: TrainTrace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} rows recorded)", self.error, self.trace.records.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Samples `theta_0 ~ N(0, sigma0^2 I)` from `seed_init` and opens a ledger
/// at the Gaussian entropy.
pub fn initialize(config: &RunConfig, dim: usize) -> Result<(ParamVector, EntropyLedger)> {
    let init = config.initializer()?;
    let mut rng = seeded(config.seed_init, Stream::Init);
    let theta = ParamVector::sample_gaussian(dim, init.sigma0(), &mut rng);
    Ok((theta, EntropyLedger::new(init.entropy(dim))))
}

/// `g' = g - g0 tanh(g / g0)` and its elementwise derivative
/// `w = 1 - sech^2(g / g0) = tanh^2(g / g0)`. `g0 = 0` is the identity.
pub fn warp_gradient(g: &[f64], g0: f64) -> (ParamVector, ParamVector) {
    if g0 == 0.0 {
        return (ParamVector::from_vec(g.to_vec()), ParamVector::from_vec(vec![1.0; g.len()]));
    }
    let mut warped = Vec::with_capacity(g.len());
    let mut w = Vec::with_capacity(g.len());
    for &gi in g {
        let t = (gi / g0).tanh();
        warped.push(gi - g0 * t);
        w.push(t * t);
    }
    (ParamVector::from_vec(warped), ParamVector::from_vec(w))
}

/// The parts of [`RunConfig`] a single step needs.
#[derive(Clone, Copy, Debug)]
pub struct StepSettings {
    pub alpha: f64,
    pub g0: f64,
    pub estimator: EstimatorMode,
    pub probes: usize,
    pub regime_check_iters: usize,
    pub hessian_cap: usize,
}

impl From<&RunConfig> for StepSettings {
    fn from(c: &RunConfig) -> Self {
        StepSettings {
            alpha: c.alpha,
            g0: c.g0,
            estimator: c.estimator,
            probes: c.probes_per_step,
            regime_check_iters: c.regime_check_iters,
            hessian_cap: c.hessian_cap,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Batch loss at the pre-step point.
    pub loss: f64,
    pub theta: ParamVector,
}

/// One update. Appends the entropy change at `theta` to the ledger, then
/// returns the moved parameters.
pub fn sgd_step<R: Rng + ?Sized>(
    obj: &(impl Objective + ?Sized),
    theta: &ParamVector,
    batch: &BatchSelector,
    settings: &StepSettings,
    ledger: &mut EntropyLedger,
    probe_rng: &mut R,
) -> Result<StepOutput> {
    let (loss, grad) = obj.value_and_gradient(theta, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "loss" });
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite { what: "gradient" });
    }
    let (step_dir, w) = warp_gradient(&grad, settings.g0);
    let spec = StepJacobianSpec {
        alpha: settings.alpha,
        warp_weights: (settings.g0 > 0.0).then(|| w.into_vec()),
    };
    let delta = match settings.estimator {
        EstimatorMode::Exact => {
            let h = dense_hessian(obj, theta, batch, settings.hessian_cap)?;
            exact_logdet_step(&h, &spec)?
        }
        EstimatorMode::TaylorProbe => taylor_logdet_lower_bound(
            obj,
            theta,
            batch,
            &spec,
            probe_rng,
            settings.probes,
            (settings.regime_check_iters > 0).then_some(settings.regime_check_iters),
        )?,
    };
    if !delta.value.is_finite() {
        return Err(Error::NonFinite { what: "entropy change" });
    }
    ledger.push(delta);

    let mut next = theta.clone();
    next.axpy(-settings.alpha, &step_dir);
    if !next.all_finite() {
        return Err(Error::NonFinite { what: "parameters" });
    }
    Ok(StepOutput { loss, theta: next })
}

/// Full training run of `config.steps` updates with per-iteration energy,
/// entropy and bound. `eval`, when given, is a held-out objective used for
/// the test log-likelihood column.
pub fn run_training(
    obj: &(impl Objective + ?Sized),
    config: &RunConfig,
    eval: Option<&dyn Objective>,
) -> std::result::Result<TrainTrace, RunFailure> {
    let early = |error: Error| RunFailure {
        error,
        trace: TrainTrace {
            records: Vec::new(),
            ledger: EntropyLedger::new(f64::NAN),
            final_theta: ParamVector::zeros(0),
            snapshots: Vec::new(),
            warnings: Vec::new(),
        },
    };
    let n = obj.num_points();
    config.validate(n).map_err(early)?;
    let prior = config.prior().map_err(early)?;
    let (mut theta, mut ledger) = initialize(config, obj.dimension()).map_err(early)?;
    let mut schedule =
        BatchSchedule::new(n, config.batch_size, config.batch_mode, config.seed_batch, config.seed_init).map_err(early)?;
    let mut probe_rng = seeded(config.seed_probe, Stream::Probe);
    let settings = StepSettings::from(config);
    let full = obj.full_batch();

    let mut warnings = Vec::new();
    if config.safety_check_iters > 0 {
        let mut probe_schedule =
            BatchSchedule::new(n, config.batch_size, config.batch_mode, config.seed_batch, config.seed_init).map_err(early)?;
        let first = probe_schedule.next_batch();
        if let Ok(lam) = lambda_max_estimate(obj, &theta, &first, config.safety_check_iters) {
            if config.alpha * lam >= 1.0 {
                let msg = format!(
                    "alpha * lambda_max = {:.4} >= 1 at initialization; entropy estimates may be invalid",
                    config.alpha * lam
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let mut records = Vec::with_capacity(config.steps + 1);
    let mut snapshots = Vec::new();

    let row = |t: usize,
               theta: &ParamVector,
               batch_loss: Option<f64>,
               entropy: f64,
               want_full: bool|
     -> Result<IterationRecord> {
        let (nll, energy_full) = match batch_loss {
            Some(l) if !want_full => (l, false),
            Some(l) if schedule_is_full(n, config) => (l, true),
            _ => (obj.value(theta, &full)?, true),
        };
        let energy = prior.log_density(theta) - nll;
        let test_log_lik = match (energy_full, eval) {
            (true, Some(e)) => Some(-e.value(theta, &e.full_batch())? / e.num_points().max(1) as f64),
            _ => None,
        };
        Ok(IterationRecord {
            t,
            train_nll: nll,
            energy,
            energy_full,
            entropy,
            bound: energy + entropy,
            test_log_lik,
        })
    };

    let diverged = |step: usize, err: Error, theta: &ParamVector, batch: &BatchSelector| -> Error {
        match err {
            Error::NonFinite { what } => {
                let alpha_lambda_max = lambda_max_estimate(obj, theta, batch, 20)
                    .map(|l| config.alpha * l)
                    .unwrap_or(f64::NAN);
                Error::Diverged {
                    step,
                    what,
                    alpha_lambda_max,
                }
            }
            other => other,
        }
    };

    let mut regime_warned = false;
    for t in 0..config.steps {
        let batch = schedule.next_batch();
        let entropy = ledger.entropy();
        let want_full = t == 0 || (config.energy_stride > 0 && t % config.energy_stride == 0);
        let step = sgd_step(obj, &theta, &batch, &settings, &mut ledger, &mut probe_rng)
            .and_then(|out| row(t, &theta, Some(out.loss), entropy, want_full).map(|r| (out, r)));
        match step {
            Ok((out, rec)) => {
                if !regime_warned && ledger.deltas().last().is_some_and(|d| !d.regime_ok) {
                    let msg = format!("alpha * lambda_max >= {TAYLOR_VALID_LIMIT} at step {t}; probe estimate may not bound the log-determinant");
                    log::warn!("{msg}");
                    warnings.push(msg);
                    regime_warned = true;
                }
                records.push(rec);
                if config.snapshot_stride > 0 && t % config.snapshot_stride == 0 {
                    snapshots.push((t, theta.clone()));
                }
                theta = out.theta;
            }
            Err(e) => {
                let error = diverged(t, e, &theta, &batch);
                log::error!("run aborted at step {t}: {error}");
                return Err(RunFailure {
                    error,
                    trace: TrainTrace {
                        records,
                        ledger,
                        final_theta: theta,
                        snapshots,
                        warnings,
                    },
                });
            }
        }
    }

    let t = config.steps;
    match row(t, &theta, None, ledger.entropy(), true) {
        Ok(rec) => records.push(rec),
        Err(e) => {
            let error = diverged(t, e, &theta, &full);
            return Err(RunFailure {
                error,
                trace: TrainTrace {
                    records,
                    ledger,
                    final_theta: theta,
                    snapshots,
                    warnings,
                },
            });
        }
    }
    snapshots.push((t, theta.clone()));
    Ok(TrainTrace {
        records,
        ledger,
        final_theta: theta,
        snapshots,
        warnings,
    })
}

fn schedule_is_full(n: usize, config: &RunConfig) -> bool {
    config.batch_size.is_none_or(|m| m >= n)
}

/// Configuration of ensemble member `k`: initialization and probe seeds
/// offset by `k`, batch seed shared.
pub fn member_config(config: &RunConfig, k: usize) -> RunConfig {
    RunConfig {
        seed_init: config.seed_init.wrapping_add(k as u64),
        seed_probe: config.seed_probe.wrapping_add(k as u64),
        ..config.clone()
    }
}

#[derive(Debug)]
pub struct EnsembleReport {
    /// Successful members as `(k, trace)`.
    pub traces: Vec<(usize, TrainTrace)>,
    pub failures: Vec<(usize, RunFailure)>,
    /// Mean over held-out points of `log (1/K sum_k p(y_i | theta_k))`.
    pub predictive_log_lik: Option<f64>,
}

/// `members` independent runs, executed in parallel. Results are ordered by
/// member index and do not depend on scheduling.
pub fn run_ensemble(
    obj: &(impl Objective + ?Sized),
    config: &RunConfig,
    members: usize,
    eval: Option<&dyn Objective>,
) -> Result<EnsembleReport> {
    if members == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let results: Vec<_> = (0..members)
        .into_par_iter()
        .map(|k| (k, run_training(obj, &member_config(config, k), eval)))
        .collect();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results {
        match r {
            Ok(t) => traces.push((k, t)),
            Err(f) => {
                log::warn!("ensemble member {k} failed: {f}");
                failures.push((k, f));
            }
        }
    }
    let predictive_log_lik = match eval {
        Some(e) if !traces.is_empty() => {
            let thetas: Vec<&ParamVector> = traces.iter().map(|(_, t)| &t.final_theta).collect();
            Some(ensemble_log_likelihood(e, &thetas)?)
        }
        _ => None,
    };
    Ok(EnsembleReport {
        traces,
        failures,
        predictive_log_lik,
    })
}

/// Mean per-point log of the ensemble-averaged predictive density.
pub fn ensemble_log_likelihood(eval: &(impl Objective + ?Sized), thetas: &[&ParamVector]) -> Result<f64> {
    let n = eval.num_points();
    if n == 0 || thetas.is_empty() {
        return Err(Error::Config("ensemble likelihood needs data and members".into()));
    }
    let k = thetas.len() as f64;
    let mut total = 0.0;
    let mut lls = vec![0.0; thetas.len()];
    for i in 0..n {
        for (slot, th) in lls.iter_mut().zip(thetas) {
            *slot = eval.point_log_likelihood(th, i)?;
        }
        let mx = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += mx + (lls.iter().map(|l| (l - mx).exp()).sum::<f64>() / k).ln();
    }
    Ok(total / n as f64)
}
