use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgdvi::optimizer::{member_config, run_ensemble, run_training, IterationRecord, TrainTrace};
use sgdvi::RunConfig;

use crate::curve::CurveFile;
use crate::spec::{build_problem, load_data, ExperimentSpec, Loaded, Select, SweepParam};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Sweep,
    Particles2d,
    OracleCheck,
    Ensemble,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Particles2d => "particles2d",
            Command::OracleCheck => "oracle-check",
            Command::Ensemble => "ensemble",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Command::Train,
            Command::Sweep,
            Command::Particles2d,
            Command::OracleCheck,
            Command::Ensemble,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

pub const TRAIN_COLUMNS: [&str; 8] = [
    "x",
    "train_metric",
    "test_metric",
    "energy",
    "entropy",
    "bound",
    "bound_bits",
    "energy_full",
];

/// Runs `command` and returns the files it wrote. Every file carries the
/// resolved spec, so [`replay`] can regenerate it.
pub fn run_command(command: Command, spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Run(format!("{}: {e}", out.display())))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, spec.to_toml()).map_err(|e| CliError::Run(format!("{}: {e}", cfg_path.display())))?;
    let mut files = match command {
        Command::Train => train(spec, out)?,
        Command::Sweep => sweep(spec, out)?,
        Command::Particles2d => particles2d(spec, out)?,
        Command::OracleCheck => crate::oracle::oracle_check(spec, out)?,
        Command::Ensemble => ensemble(spec, out)?,
    };
    files.insert(0, cfg_path);
    Ok(files)
}

/// Re-runs the experiment echoed in a curve file into `out`.
pub fn replay(from: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let curve = CurveFile::read(from)?;
    let command = curve
        .get_meta("command")
        .and_then(Command::parse)
        .ok_or_else(|| CliError::Config(format!("{}: no command recorded", from.display())))?;
    let config = curve
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{}: no echoed config", from.display())))?;
    let spec = ExperimentSpec::from_toml(config, &[])?;
    run_command(command, &spec, out)
}

fn new_curve(command: Command, spec: &ExperimentSpec, columns: &[&str]) -> CurveFile {
    let mut c = CurveFile::new(columns);
    c.meta("command", command.name())
        .meta("seed_init", spec.run.seed_init)
        .meta("seed_batch", spec.run.seed_batch)
        .meta("seed_probe", spec.run.seed_probe);
    c.config = Some(spec.to_toml());
    c
}

fn per_point(nll: f64, n: usize) -> f64 {
    -nll / n.max(1) as f64
}

fn record_row(rec: &IterationRecord, n: usize) -> Vec<Option<f64>> {
    vec![
        Some(rec.t as f64),
        Some(per_point(rec.train_nll, n)),
        rec.test_log_lik,
        Some(rec.energy),
        Some(rec.entropy),
        Some(rec.bound),
        Some(rec.bound / std::f64::consts::LN_2),
        Some(if rec.energy_full { 1.0 } else { 0.0 }),
    ]
}

pub fn train(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = load_data(&spec.data)?;
    let problem = build_problem(&spec.model, &data)?;
    let n = problem.n_train();
    log::info!("training {:?}: D = {}, N = {n}, T = {}", problem.train.kind(), problem.train.dimension(), spec.run.steps);
    let (trace, failure) = match run_training(problem.train.as_ref(), &spec.run, problem.test.as_deref()) {
        Ok(t) => (t, None),
        Err(f) => (f.trace, Some(f.error)),
    };
    let mut curve = new_curve(Command::Train, spec, &TRAIN_COLUMNS);
    curve.meta("dimension", problem.train.dimension()).meta("n_train", n);
    curve.meta("status", if failure.is_some() { "diverged" } else { "ok" });
    if let Some(t) = trace.argmax_bound() {
        curve.meta("argmax_bound_t", t);
    }
    if let Some(t) = trace.argmax_test() {
        curve.meta("argmax_test_t", t);
    }
    if let Some(last) = trace.records.last() {
        curve.meta_f64("final_bound", last.bound);
    }
    curve.meta("warnings", trace.warnings.len());
    for rec in &trace.records {
        curve.push(record_row(rec, n));
    }
    let path = out.join("curve.csv");
    curve.write(&path)?;
    match failure {
        Some(e) => Err(CliError::Run(format!("training stopped: {e}; partial curve in {}", path.display()))),
        None => Ok(vec![path]),
    }
}

#[derive(Clone, Debug)]
struct Selected {
    t: usize,
    train_metric: f64,
    test_metric: Option<f64>,
    energy: f64,
    entropy: f64,
    bound: f64,
}

fn select(trace: &TrainTrace, how: Select, n: usize) -> Selected {
    let rec = match how {
        Select::Terminal => trace.last(),
        Select::Best => {
            let t = trace.argmax_bound().unwrap_or(trace.last().t);
            &trace.records[t]
        }
    };
    Selected {
        t: rec.t,
        train_metric: per_point(rec.train_nll, n),
        test_metric: rec.test_log_lik,
        energy: rec.energy,
        entropy: rec.entropy,
        bound: rec.bound,
    }
}

fn apply_param(spec: &ExperimentSpec, param: SweepParam, v: f64) -> Result<ExperimentSpec, CliError> {
    let mut s = spec.clone();
    match param {
        SweepParam::Hidden => {
            if !(v >= 1.0 && v.fract() == 0.0) {
                return Err(CliError::Config(format!("hidden-unit grid value {v} is not a positive integer")));
            }
            s.model.hidden = v as usize;
        }
        SweepParam::G0 => s.run.g0 = v,
        SweepParam::Alpha => s.run.alpha = v,
        SweepParam::Sigma0 => s.run.sigma0 = v,
    }
    Ok(s)
}

fn mean_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, None);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, Some((var / n).sqrt()))
}

fn run_one(data: &Loaded, spec: &ExperimentSpec, cfg: &RunConfig, how: Select) -> Result<Selected, String> {
    let problem = build_problem(&spec.model, data).map_err(|e| e.to_string())?;
    let n = problem.n_train();
    run_training(problem.train.as_ref(), cfg, problem.test.as_deref())
        .map(|t| select(&t, how, n))
        .map_err(|f| f.to_string())
}

pub fn sweep(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sw = &spec.sweep;
    let param = sw
        .param
        .ok_or_else(|| CliError::Config("sweep needs `sweep.param`".into()))?;
    if sw.values.is_empty() {
        return Err(CliError::Config("sweep grid `sweep.values` is empty".into()));
    }
    if sw.repeats == 0 {
        return Err(CliError::Config("sweep.repeats must be at least 1".into()));
    }
    let points = sw
        .values
        .iter()
        .map(|&v| apply_param(spec, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let data = load_data(&spec.data)?;
    // Fail early on a bad model or data spec rather than once per grid point.
    build_problem(&points[0].model, &data)?;

    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|i| (0..sw.repeats).map(move |r| (i, r))).collect();
    let results: Vec<Result<Selected, String>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let cfg = member_config(&points[i].run, r);
            let res = run_one(&data, &points[i], &cfg, sw.select);
            if let Err(e) = &res {
                log::warn!("grid point {} repeat {r} failed: {e}", sw.values[i]);
            }
            res
        })
        .collect();

    let mut runs = new_curve(
        Command::Sweep,
        spec,
        &[
            "x",
            "repeat",
            "t_selected",
            "train_metric",
            "test_metric",
            "energy",
            "entropy",
            "bound",
            "bound_bits",
            "failed",
        ],
    );
    for (&(i, r), res) in jobs.iter().zip(&results) {
        let x = Some(sw.values[i]);
        runs.push(match res {
            Ok(s) => vec![
                x,
                Some(r as f64),
                Some(s.t as f64),
                Some(s.train_metric),
                s.test_metric,
                Some(s.energy),
                Some(s.entropy),
                Some(s.bound),
                Some(s.bound / std::f64::consts::LN_2),
                Some(0.0),
            ],
            Err(_) => vec![x, Some(r as f64), None, None, None, None, None, None, None, Some(1.0)],
        });
    }

    let mut summary = new_curve(
        Command::Sweep,
        spec,
        &[
            "x",
            "train_metric",
            "test_metric",
            "energy",
            "entropy",
            "bound",
            "bound_bits",
            "bound_se",
            "n_ok",
            "n_failed",
        ],
    );
    let mut best: Option<(f64, f64)> = None;
    for (i, &x) in sw.values.iter().enumerate() {
        let ok: Vec<&Selected> = jobs
            .iter()
            .zip(&results)
            .filter(|((j, _), _)| *j == i)
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        let failed = sw.repeats - ok.len();
        if ok.is_empty() {
            summary.push(vec![Some(x), None, None, None, None, None, None, None, Some(0.0), Some(failed as f64)]);
            continue;
        }
        let col = |f: &dyn Fn(&Selected) -> f64| mean_se(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
        let tests: Vec<f64> = ok.iter().filter_map(|s| s.test_metric).collect();
        let test = (tests.len() == ok.len()).then(|| mean_se(&tests).0);
        let (bound, se) = col(&|s| s.bound);
        if best.is_none_or(|(_, b)| bound > b) {
            best = Some((x, bound));
        }
        summary.push(vec![
            Some(x),
            Some(col(&|s| s.train_metric).0),
            test,
            Some(col(&|s| s.energy).0),
            Some(col(&|s| s.entropy).0),
            Some(bound),
            Some(bound / std::f64::consts::LN_2),
            se,
            Some(ok.len() as f64),
            Some(failed as f64),
        ]);
    }
    let param_name = match param {
        SweepParam::Hidden => "hidden",
        SweepParam::G0 => "g0",
        SweepParam::Alpha => "alpha",
        SweepParam::Sigma0 => "sigma0",
    };
    for c in [&mut summary, &mut runs] {
        c.meta("param", param_name)
            .meta("select", format!("{:?}", sw.select).to_lowercase())
            .meta("repeats", sw.repeats);
    }
    if let Some((x, _)) = best {
        summary.meta_f64("argmax_bound_x", x);
    }
    let n_failed = results.iter().filter(|r| r.is_err()).count();
    summary.meta("failed_runs", n_failed);
    let (p1, p2) = (out.join("sweep.csv"), out.join("sweep_runs.csv"));
    summary.write(&p1)?;
    runs.write(&p2)?;
    if n_failed == results.len() {
        return Err(CliError::Run("every sweep run failed".into()));
    }
    Ok(vec![p1, p2])
}

pub fn particles2d(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ps = &spec.particles;
    if ps.count == 0 || ps.thresholds.is_empty() {
        return Err(CliError::Config("particles2d needs count >= 1 and at least one threshold".into()));
    }
    let data = load_data(&spec.data)?;
    let problem = build_problem(&spec.model, &data)?;
    let obj = problem.train.as_ref();
    if obj.dimension() != 2 {
        return Err(CliError::Config(format!(
            "particles2d needs a 2-D objective, {:?} has D = {}",
            obj.kind(),
            obj.dimension()
        )));
    }
    let mut summary = new_curve(
        Command::Particles2d,
        spec,
        &["g0", "t", "mean0", "mean1", "var0", "var1", "cov01", "mean_entropy", "mean_bound"],
    );
    let mut files = Vec::new();
    for (ti, &g0) in ps.thresholds.iter().enumerate() {
        let cfg = RunConfig {
            g0,
            snapshot_stride: ps.stride,
            ..spec.run.clone()
        };
        let traces = (0..ps.count)
            .into_par_iter()
            .map(|k| run_training(obj, &member_config(&cfg, k), None))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|f| CliError::Run(format!("particle run with g0 = {g0} failed: {f}")))?;
        let mut cloud = new_curve(Command::Particles2d, spec, &["t", "particle", "theta0", "theta1", "entropy", "bound"]);
        cloud.meta_f64("g0", g0);
        let times: Vec<usize> = traces[0].snapshots.iter().map(|(t, _)| *t).collect();
        for (si, &t) in times.iter().enumerate() {
            let mut pts = Vec::with_capacity(traces.len());
            let (mut se, mut sb) = (0.0, 0.0);
            for (k, tr) in traces.iter().enumerate() {
                let th = &tr.snapshots[si].1;
                let rec = &tr.records[t];
                cloud.push(vec![
                    Some(t as f64),
                    Some(k as f64),
                    Some(th[0]),
                    Some(th[1]),
                    Some(rec.entropy),
                    Some(rec.bound),
                ]);
                pts.push([th[0], th[1]]);
                se += rec.entropy;
                sb += rec.bound;
            }
            let n = pts.len() as f64;
            let m0 = pts.iter().map(|p| p[0]).sum::<f64>() / n;
            let m1 = pts.iter().map(|p| p[1]).sum::<f64>() / n;
            let dn = (n - 1.0).max(1.0);
            let v0 = pts.iter().map(|p| (p[0] - m0).powi(2)).sum::<f64>() / dn;
            let v1 = pts.iter().map(|p| (p[1] - m1).powi(2)).sum::<f64>() / dn;
            let c01 = pts.iter().map(|p| (p[0] - m0) * (p[1] - m1)).sum::<f64>() / dn;
            summary.push(vec![
                Some(g0),
                Some(t as f64),
                Some(m0),
                Some(m1),
                Some(v0),
                Some(v1),
                Some(c01),
                Some(se / n),
                Some(sb / n),
            ]);
        }
        let path = out.join(format!("particles_{ti}.csv"));
        cloud.write(&path)?;
        files.push(path);
    }
    let path = out.join("particles_summary.csv");
    summary.write(&path)?;
    files.push(path);
    Ok(files)
}

pub fn ensemble(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data = load_data(&spec.data)?;
    let problem = build_problem(&spec.model, &data)?;
    let n = problem.n_train();
    let report = run_ensemble(problem.train.as_ref(), &spec.run, spec.ensemble.members, problem.test.as_deref())?;
    let mut c = new_curve(
        Command::Ensemble,
        spec,
        &["member", "train_metric", "test_metric", "energy", "entropy", "bound", "bound_bits", "failed"],
    );
    let mut rows: Vec<(usize, Vec<Option<f64>>)> = report
        .traces
        .iter()
        .map(|(k, t)| {
            let s = select(t, Select::Terminal, n);
            (
                *k,
                vec![
                    Some(*k as f64),
                    Some(s.train_metric),
                    s.test_metric,
                    Some(s.energy),
                    Some(s.entropy),
                    Some(s.bound),
                    Some(s.bound / std::f64::consts::LN_2),
                    Some(0.0),
                ],
            )
        })
        .collect();
    rows.extend(
        report
            .failures
            .iter()
            .map(|(k, _)| (*k, vec![Some(*k as f64), None, None, None, None, None, None, Some(1.0)])),
    );
    rows.sort_by_key(|(k, _)| *k);
    for (_, r) in rows {
        c.push(r);
    }
    c.meta("members", spec.ensemble.members).meta("failed", report.failures.len());
    if let Some(ll) = report.predictive_log_lik {
        c.meta_f64("ensemble_test_log_lik", ll);
    }
    let tests: Vec<f64> = report.traces.iter().filter_map(|(_, t)| t.last().test_log_lik).collect();
    if !tests.is_empty() {
        c.meta_f64("mean_member_test_log_lik", tests.iter().sum::<f64>() / tests.len() as f64);
    }
    let path = out.join("ensemble.csv");
    c.write(&path)?;
    if report.traces.is_empty() {
        return Err(CliError::Run("every ensemble member failed".into()));
    }
    Ok(vec![path])
}
