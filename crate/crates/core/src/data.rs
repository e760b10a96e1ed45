//! Datasets: delimited text and IDX ingestion, synthetic generation,
//! standardization and seeded train/test splits.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Row-major `N x outputs`.
    Regression { values: Vec<f64>, outputs: usize },
    Labels { labels: Vec<usize>, classes: usize },
}

/// Per-column affine transform `x_norm = (x - shift) / scale` that was applied
/// to the stored values. Empty vectors mean "untouched".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_shift: Vec<f64>,
    pub target_scale: Vec<f64>,
}

impl Normalization {
    pub fn is_identity(&self) -> bool {
        self.feature_shift.is_empty() && self.target_shift.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    targets: Targets,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(features: Vec<f64>, n_features: usize, targets: Targets) -> Result<Self> {
        let n_rows = if n_features == 0 { 0 } else { features.len() / n_features };
        if n_rows * n_features != features.len() {
            return Err(Error::Config(format!(
                "feature buffer of length {} is not a multiple of {n_features}",
                features.len()
            )));
        }
        let t_rows = match &targets {
            Targets::Regression { values, outputs } => {
                if *outputs == 0 || values.len() % outputs != 0 {
                    return Err(Error::Config("ragged regression targets".into()));
                }
                values.len() / outputs
            }
            Targets::Labels { labels, classes } => {
                if let Some(l) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::Config(format!("label {l} out of range for {classes} classes")));
                }
                labels.len()
            }
        };
        if t_rows != n_rows {
            return Err(Error::Config(format!("{n_rows} feature rows but {t_rows} target rows")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite feature value".into()));
        }
        if let Targets::Regression { values, .. } = &targets {
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("non-finite target value".into()));
            }
        }
        Ok(Dataset {
            features,
            n_rows,
            n_features,
            targets,
            normalization: Normalization::default(),
        })
    }

    /// A dataset with zero rows.
    pub fn empty_regression(n_features: usize, outputs: usize) -> Self {
        Dataset {
            features: Vec::new(),
            n_rows: 0,
            n_features,
            targets: Targets::Regression {
                values: Vec::new(),
                outputs,
            },
            normalization: Normalization::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Number of regression outputs, or number of classes.
    pub fn n_outputs(&self) -> usize {
        match &self.targets {
            Targets::Regression { outputs, .. } => *outputs,
            Targets::Labels { classes, .. } => *classes,
        }
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Regression { values, outputs } => Targets::Regression {
                values: rows
                    .iter()
                    .flat_map(|&r| values[r * outputs..(r + 1) * outputs].iter().copied())
                    .collect(),
                outputs: *outputs,
            },
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: *classes,
            },
        };
        Dataset {
            features,
            n_rows: rows.len(),
            n_features: self.n_features,
            targets,
            normalization: self.normalization.clone(),
        }
    }

    /// Column means and standard deviations of this dataset (features, then
    /// regression targets). Constant columns get scale 1.
    pub fn standardization(&self) -> Normalization {
        let (fs, fc) = column_stats(&self.features, self.n_features);
        let (ts, tc) = match &self.targets {
            Targets::Regression { values, outputs } => column_stats(values, *outputs),
            Targets::Labels { .. } => (Vec::new(), Vec::new()),
        };
        Normalization {
            feature_shift: fs,
            feature_scale: fc,
            target_shift: ts,
            target_scale: tc,
        }
    }

    /// Applies `norm` to raw (un-normalized) data.
    pub fn normalized_with(&self, norm: &Normalization) -> Result<Dataset> {
        if !self.normalization.is_identity() {
            return Err(Error::Config("dataset is already normalized".into()));
        }
        let mut out = self.clone();
        if !norm.feature_shift.is_empty() {
            apply_columns(&mut out.features, self.n_features, &norm.feature_shift, &norm.feature_scale, false);
        }
        if let Targets::Regression { values, outputs } = &mut out.targets {
            if !norm.target_shift.is_empty() {
                apply_columns(values, *outputs, &norm.target_shift, &norm.target_scale, false);
            }
        }
        out.normalization = norm.clone();
        Ok(out)
    }

    /// Inverts the recorded normalization.
    pub fn denormalized(&self) -> Dataset {
        let norm = &self.normalization;
        let mut out = self.clone();
        if !norm.feature_shift.is_empty() {
            apply_columns(&mut out.features, self.n_features, &norm.feature_shift, &norm.feature_scale, true);
        }
        if let Targets::Regression { values, outputs } = &mut out.targets {
            if !norm.target_shift.is_empty() {
                apply_columns(values, *outputs, &norm.target_shift, &norm.target_scale, true);
            }
        }
        out.normalization = Normalization::default();
        out
    }

    /// Seeded shuffle into `(train, test)` with `round(fraction * N)` training
    /// rows. With `standardize`, column statistics come from the training part
    /// only and are applied to both.
    pub fn split(&self, fraction: f64, seed: u64, standardize: bool) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
        }
        let n_train = (fraction * self.n_rows as f64).round() as usize;
        if n_train == 0 || n_train == self.n_rows {
            return Err(Error::Config(format!(
                "split of {} rows at fraction {fraction} leaves an empty side",
                self.n_rows
            )));
        }
        let mut order: Vec<usize> = (0..self.n_rows).collect();
        order.shuffle(&mut seeded(seed, Stream::Split));
        let train = self.subset(&order[..n_train]);
        let test = self.subset(&order[n_train..]);
        if standardize {
            let norm = train.standardization();
            Ok((train.normalized_with(&norm)?, test.normalized_with(&norm)?))
        } else {
            Ok((train, test))
        }
    }

    /// The first `k` rows (or all of them).
    pub fn head(&self, k: usize) -> Dataset {
        let rows: Vec<usize> = (0..k.min(self.n_rows)).collect();
        self.subset(&rows)
    }
}

fn column_stats(data: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    let mut mean = vec![0.0; cols];
    let mut scale = vec![1.0; cols];
    if rows == 0 {
        return (mean, scale);
    }
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += data[r * cols + c];
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    for c in 0..cols {
        let var = (0..rows).map(|r| (data[r * cols + c] - mean[c]).powi(2)).sum::<f64>() / rows as f64;
        let sd = var.sqrt();
        scale[c] = if sd > 0.0 { sd } else { 1.0 };
    }
    (mean, scale)
}

fn apply_columns(data: &mut [f64], cols: usize, shift: &[f64], scale: &[f64], invert: bool) {
    for row in data.chunks_mut(cols) {
        for ((x, s), k) in row.iter_mut().zip(shift).zip(scale) {
            *x = if invert { *x * k + s } else { (*x - s) / k };
        }
    }
}

/// How to read a delimited text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelimitedSchema {
    pub delimiter: u8,
    pub has_header: bool,
    /// Zero-based column indices holding regression targets. Empty means
    /// the last column.
    pub target_columns: Vec<usize>,
}

impl Default for DelimitedSchema {
    fn default() -> Self {
        DelimitedSchema {
            delimiter: b',',
            has_header: true,
            target_columns: Vec::new(),
        }
    }
}

/// Reads a delimited numeric table into a regression dataset.
pub fn load_delimited(path: impl AsRef<Path>, schema: &DelimitedSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut width: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("ragged row: expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("non-numeric cell {cell:?} in column {}", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("non-finite cell {cell:?} in column {}", c + 1),
                });
            }
            vals.push(v);
        }
        rows.push(vals);
    }

    let width = width.unwrap_or(0);
    let target_cols: Vec<usize> = if schema.target_columns.is_empty() {
        if width == 0 {
            Vec::new()
        } else {
            vec![width - 1]
        }
    } else {
        schema.target_columns.clone()
    };
    if let Some(&c) = target_cols.iter().find(|&&c| c >= width && width > 0) {
        return Err(Error::Config(format!("target column {c} out of range for {width} columns")));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|c| !target_cols.contains(c)).collect();
    let mut features = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut values = Vec::with_capacity(rows.len() * target_cols.len());
    for r in &rows {
        features.extend(feature_cols.iter().map(|&c| r[c]));
        values.extend(target_cols.iter().map(|&c| r[c]));
    }
    log::info!("{}: {} rows, {} features", path.display(), rows.len(), feature_cols.len());
    if rows.is_empty() {
        return Ok(Dataset::empty_regression(feature_cols.len(), target_cols.len().max(1)));
    }
    Dataset::new(
        features,
        feature_cols.len(),
        Targets::Regression {
            values,
            outputs: target_cols.len(),
        },
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.into(),
        line,
        msg: e.to_string(),
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Reads an IDX image/label pair (optionally gzipped) into a classification
/// dataset with pixels scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let ibytes = read_maybe_gz(ipath)?;
    let lbytes = read_maybe_gz(lpath)?;
    let ierr = |msg: String| Error::Idx {
        which: "images",
        path: ipath.into(),
        msg,
    };
    let lerr = |msg: String| Error::Idx {
        which: "labels",
        path: lpath.into(),
        msg,
    };

    let magic = be_u32(&ibytes, 0).ok_or_else(|| ierr("truncated header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ierr(format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n_img = be_u32(&ibytes, 4).ok_or_else(|| ierr("truncated header".into()))? as usize;
    let rows = be_u32(&ibytes, 8).ok_or_else(|| ierr("truncated header".into()))? as usize;
    let cols = be_u32(&ibytes, 12).ok_or_else(|| ierr("truncated header".into()))? as usize;
    let pixels = rows * cols;
    if ibytes.len() != 16 + n_img * pixels {
        return Err(ierr(format!(
            "expected {} bytes of pixel data, found {}",
            n_img * pixels,
            ibytes.len().saturating_sub(16)
        )));
    }

    let magic = be_u32(&lbytes, 0).ok_or_else(|| lerr("truncated header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(lerr(format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_lab = be_u32(&lbytes, 4).ok_or_else(|| lerr("truncated header".into()))? as usize;
    if lbytes.len() != 8 + n_lab {
        return Err(lerr(format!("expected {n_lab} labels, found {}", lbytes.len().saturating_sub(8))));
    }
    if n_lab != n_img {
        return Err(lerr(format!("{n_lab} labels but {n_img} images")));
    }

    let n = limit.map_or(n_img, |l| l.min(n_img));
    let features: Vec<f64> = ibytes[16..16 + n * pixels].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lbytes[8..8 + n].iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(lerr(format!("label {bad} outside 0..=9")));
    }
    let mut ds = if n == 0 {
        Dataset {
            features: Vec::new(),
            n_rows: 0,
            n_features: pixels,
            targets: Targets::Labels { labels, classes: 10 },
            normalization: Normalization::default(),
        }
    } else {
        Dataset::new(features, pixels, Targets::Labels { labels, classes: 10 })?
    };
    ds.normalization.feature_shift = vec![0.0; pixels];
    ds.normalization.feature_scale = vec![255.0; pixels];
    Ok(ds)
}

/// Writes raw IDX image and label files (uncompressed).
pub fn write_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    classes: &[u8],
) -> Result<()> {
    if pixels.len() != classes.len() * rows * cols {
        return Err(Error::Config("pixel buffer does not match label count".into()));
    }
    let mut f = File::create(images)?;
    for v in [IDX_IMAGES_MAGIC, classes.len() as u32, rows as u32, cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(pixels)?;
    let mut f = File::create(labels)?;
    for v in [IDX_LABELS_MAGIC, classes.len() as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(classes)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetFunction {
    /// `y = x . w`
    Linear { weights: Vec<f64> },
    /// Linear with weights drawn from `N(0, 1)` using the data seed.
    RandomLinear,
    /// `y = sum_j sin(frequency * x_j)`
    Sine { frequency: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub features: usize,
    pub noise_sigma: f64,
    pub target: TargetFunction,
}

/// Standard-normal features, `y = f(x) + noise_sigma * eps`. Fully determined
/// by the spec (including the seed).
pub fn make_synthetic_regression(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.features == 0 {
        return Err(Error::Config("synthetic data needs n >= 1 and features >= 1".into()));
    }
    let mut rng = seeded(spec.seed, Stream::Data);
    let weights: Option<Vec<f64>> = match &spec.target {
        TargetFunction::Linear { weights } => {
            if weights.len() != spec.features {
                return Err(Error::DimensionMismatch {
                    expected: spec.features,
                    got: weights.len(),
                });
            }
            Some(weights.clone())
        }
        TargetFunction::RandomLinear => Some((0..spec.features).map(|_| rng.sample(StandardNormal)).collect()),
        TargetFunction::Sine { .. } => None,
    };
    let features: Vec<f64> = (0..spec.n * spec.features).map(|_| rng.sample(StandardNormal)).collect();
    let values: Vec<f64> = features
        .chunks(spec.features)
        .map(|x| {
            let clean: f64 = match (&spec.target, &weights) {
                (TargetFunction::Sine { frequency }, _) => x.iter().map(|v| (frequency * v).sin()).sum(),
                (_, Some(w)) => x.iter().zip(w).map(|(a, b)| a * b).sum(),
                _ => unreachable!(),
            };
            let eps: f64 = rng.sample(StandardNormal);
            clean + spec.noise_sigma * eps
        })
        .collect();
    Dataset::new(features, spec.features, Targets::Regression { values, outputs: 1 })
}
