//! Declarative experiment description, read from TOML with dotted
//! `key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sgdvi::data::{load_delimited, load_idx, make_synthetic_regression, DelimitedSchema, SyntheticSpec, Targets};
use sgdvi::model::{Activation, BayesLinearRegression, GaussianMixture2d, MixtureComponent, Mlp, MlpTask, Quadratic};
use sgdvi::{Dataset, Objective, RunConfig};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub run: RunConfig,
    pub model: ModelSpec,
    pub data: DataSpec,
    pub sweep: SweepSpec,
    pub particles: ParticleSpec,
    pub ensemble: EnsembleSpec,
    pub oracle: OracleSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Quadratic,
    Linear,
    Mlp,
    Mixture,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// MLP hidden width.
    pub hidden: usize,
    pub activation: Activation,
    pub task: TaskKind,
    /// Likelihood noise for regression models.
    pub noise_sigma: f64,
    /// Quadratic matrix `A` (rows); identity of size `dim` when absent.
    pub matrix: Option<Vec<Vec<f64>>>,
    pub center: Option<Vec<f64>>,
    pub dim: usize,
    /// Mixture components; the built-in two-component posterior when absent.
    pub components: Option<Vec<MixtureComponent>>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Quadratic,
            hidden: 10,
            activation: Activation::Tanh,
            task: TaskKind::Regression,
            noise_sigma: 1.0,
            matrix: None,
            center: None,
            dim: 2,
            components: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    None,
    Synthetic,
    Delimited,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub source: DataSource,
    /// Delimited text file.
    pub path: Option<PathBuf>,
    pub delimiter: char,
    pub header: bool,
    /// Zero-based target columns; the last column when empty.
    pub target_columns: Vec<usize>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Synthetic generator; `n` counts training points only.
    pub synthetic: Option<SyntheticSpec>,
    /// Rows used for training (after `limit`-style truncation for files).
    pub limit: Option<usize>,
    /// Held-out rows taken after the training rows; 0 means none.
    pub test_n: Option<usize>,
    /// Seeded random split instead of `test_n`.
    pub train_fraction: Option<f64>,
    pub split_seed: u64,
    /// Standardize features and regression targets with training statistics.
    pub standardize: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            source: DataSource::None,
            path: None,
            delimiter: ',',
            header: true,
            target_columns: Vec::new(),
            images: None,
            labels: None,
            synthetic: None,
            limit: None,
            test_n: None,
            train_fraction: None,
            split_seed: 0,
            standardize: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Hidden,
    G0,
    Alpha,
    Sigma0,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Select {
    /// Bound and likelihoods at `t = T`.
    #[default]
    Terminal,
    /// At the iteration with the largest bound.
    Best,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub param: Option<SweepParam>,
    pub values: Vec<f64>,
    /// Seeds per grid point; repeat `r` uses `seed_init + r`, `seed_probe + r`
    /// at every grid point.
    pub repeats: usize,
    pub select: Select,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            param: None,
            values: Vec::new(),
            repeats: 1,
            select: Select::Terminal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleSpec {
    pub count: usize,
    /// One particle cloud per threshold.
    pub thresholds: Vec<f64>,
    pub stride: usize,
}

impl Default for ParticleSpec {
    fn default() -> Self {
        ParticleSpec {
            count: 1000,
            thresholds: vec![0.0, 1.0],
            stride: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec { members: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    /// Multiplies every tolerance; 0 makes every check fail.
    pub tolerance_scale: f64,
    pub seed: u64,
    pub mc_samples: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            tolerance_scale: 1.0,
            seed: 0,
            mc_samples: 200_000,
        }
    }
}

impl ExperimentSpec {
    /// Parses TOML and applies `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Sets all three run seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed_init = seed;
        self.run.seed_batch = seed;
        self.run.seed_probe = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

fn apply_override(table: &mut toml::Table, raw: &str) -> Result<(), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Training and optional held-out data.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub train: Option<Arc<Dataset>>,
    pub test: Option<Arc<Dataset>>,
}

pub fn load_data(spec: &DataSpec) -> Result<Loaded, CliError> {
    let need = |o: &Option<PathBuf>, what: &str| {
        o.clone()
            .ok_or_else(|| CliError::Config(format!("data source needs `data.{what}`")))
    };
    let test_n = spec.test_n.filter(|&k| k > 0);
    let extra = test_n.unwrap_or(0);
    let full = match spec.source {
        DataSource::None => {
            return Ok(Loaded {
                train: None,
                test: None,
            })
        }
        DataSource::Synthetic => {
            let mut s = spec
                .synthetic
                .clone()
                .ok_or_else(|| CliError::Config("synthetic source needs `[data.synthetic]`".into()))?;
            s.n += extra;
            make_synthetic_regression(&s)?
        }
        DataSource::Delimited => {
            if !spec.delimiter.is_ascii() {
                return Err(CliError::Config("delimiter must be a single ASCII character".into()));
            }
            let schema = DelimitedSchema {
                delimiter: spec.delimiter as u8,
                has_header: spec.header,
                target_columns: spec.target_columns.clone(),
            };
            load_delimited(need(&spec.path, "path")?, &schema)?
        }
        DataSource::Idx => {
            let limit = spec.limit.map(|l| l + extra);
            load_idx(need(&spec.images, "images")?, need(&spec.labels, "labels")?, limit)?
        }
    };
    let (train, test) = match (spec.train_fraction, test_n) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config("set at most one of data.train_fraction and data.test_n".into()));
        }
        (Some(f), None) => {
            let (a, b) = full.split(f, spec.split_seed, spec.standardize)?;
            (a, Some(b))
        }
        (None, Some(k)) => {
            let n_train = match spec.source {
                DataSource::Synthetic => full.len() - k,
                _ => spec.limit.unwrap_or(full.len().saturating_sub(k)).min(full.len().saturating_sub(k)),
            };
            if n_train == 0 {
                return Err(CliError::Config("held-out split leaves an empty side".into()));
            }
            let idx: Vec<usize> = (0..full.len()).collect();
            let train = full.subset(&idx[..n_train]);
            let test = full.subset(&idx[n_train..n_train + k]);
            if spec.standardize {
                let norm = train.standardization();
                (train.normalized_with(&norm)?, Some(test.normalized_with(&norm)?))
            } else {
                (train, Some(test))
            }
        }
        (None, None) => {
            let train = match spec.limit {
                Some(l) => full.head(l),
                None => full,
            };
            if spec.standardize {
                let norm = train.standardization();
                (train.normalized_with(&norm)?, None)
            } else {
                (train, None)
            }
        }
    };
    Ok(Loaded {
        train: Some(Arc::new(train)),
        test: test.map(Arc::new),
    })
}

pub struct Problem {
    pub train: Box<dyn Objective>,
    pub test: Option<Box<dyn Objective>>,
}

impl Problem {
    pub fn n_train(&self) -> usize {
        self.train.num_points()
    }
}

pub fn build_problem(model: &ModelSpec, data: &Loaded) -> Result<Problem, CliError> {
    let build = |ds: Option<&Arc<Dataset>>| -> Result<Box<dyn Objective>, CliError> {
        let need_data = || {
            ds.cloned()
                .ok_or_else(|| CliError::Config(format!("model {:?} needs a data source", model.kind)))
        };
        Ok(match model.kind {
            ModelKind::Quadratic => Box::new(quadratic(model)?),
            ModelKind::Mixture => Box::new(match &model.components {
                Some(c) => GaussianMixture2d::new(c.clone())?,
                None => GaussianMixture2d::default_posterior(),
            }),
            ModelKind::Linear => Box::new(BayesLinearRegression::new(need_data()?, model.noise_sigma)?),
            ModelKind::Mlp => {
                let task = match model.task {
                    TaskKind::Regression => MlpTask::Regression {
                        noise_sigma: model.noise_sigma,
                    },
                    TaskKind::Classification => MlpTask::Classification,
                };
                let d = need_data()?;
                if matches!((task, d.targets()), (MlpTask::Classification, Targets::Regression { .. })) {
                    return Err(CliError::Config("classification needs a labelled data source".into()));
                }
                Box::new(Mlp::new(d, model.hidden, model.activation, task)?)
            }
        })
    };
    let data_free = matches!(model.kind, ModelKind::Quadratic | ModelKind::Mixture);
    let train = build(data.train.as_ref())?;
    let test = if data_free { None } else { data.test.as_ref().map(|t| build(Some(t))).transpose()? };
    Ok(Problem { train, test })
}

fn quadratic(model: &ModelSpec) -> Result<Quadratic, CliError> {
    let a = match &model.matrix {
        Some(rows) => {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(CliError::Config("model.matrix must be square".into()));
            }
            nalgebra::DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
        None => nalgebra::DMatrix::identity(model.dim, model.dim),
    };
    let mu = match &model.center {
        Some(c) => nalgebra::DVector::from_column_slice(c),
        None => nalgebra::DVector::zeros(a.nrows()),
    };
    Ok(Quadratic::new(a, mu)?)
}
