//! Toy classification datasets and their train/validation/test split.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::supernet::Samples;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadSplit([f64; 3]),
    #[error("{path}: row {row} has {got} fields, expected {expected}")]
    Ragged {
        path: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not numeric")]
    NonNumeric {
        path: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: label `{value}` in row {row} is not a non-negative integer")]
    BadLabel { path: String, row: usize, value: String },
    #[error("{path}: no column named `{0}`", path = .1)]
    MissingColumn(String, String),
    #[error("{path}: split column value `{value}` in row {row} is not train, val or test")]
    BadSplitName { path: String, row: usize, value: String },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Spirals {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_arms")]
        arms: usize,
    },
    GaussianBlobs {
        #[serde(default = "default_samples")]
        samples: usize,
        /// Per-coordinate standard deviation around each center.
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_arms")]
        classes: usize,
        /// Radius of the circle the centers sit on.
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// Numeric CSV with a header row. An optional `split` column with values
    /// `train`/`val`/`test` fixes the assignment; otherwise rows are split by
    /// the configured fractions.
    Csv {
        path: String,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_samples() -> usize {
    2000
}
fn default_noise() -> f64 {
    0.15
}
fn default_arms() -> usize {
    2
}
fn default_separation() -> f64 {
    3.0
}
fn default_label_column() -> String {
    "label".into()
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            samples: default_samples(),
            noise: default_noise(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.4,
            val: 0.4,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&x| !(x > 0.0)) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
            return Err(DataError::BadSplit(f));
        }
        Ok(())
    }

    /// Train, validation and test sizes for `n` rows; test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (n as f64 * self.train).round() as usize;
        let val = ((n as f64 * self.val).round() as usize).min(n - train.min(n));
        (train.min(n), val, n - train.min(n) - val)
    }
}

/// Disjoint train/validation/test samples, standardized with train statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub num_classes: usize,
}

impl DatasetSplit {
    pub fn num_features(&self) -> usize {
        self.train.num_features()
    }

    /// SHA-256 over every feature and label, in split order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in [&self.train, &self.val, &self.test] {
            h.update((s.len() as u64).to_le_bytes());
            for v in s.features.data() {
                h.update(v.to_bits().to_le_bytes());
            }
            for &l in &s.labels {
                h.update((l as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

struct Raw {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn two_moons<R: Rng>(n: usize, noise: f64, rng: &mut R) -> Raw {
    let outer = n / 2;
    let inner = n - outer;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let step = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    for i in 0..outer {
        let t = step(i, outer);
        features.push(vec![t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..inner {
        let t = step(i, inner);
        features.push(vec![1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    add_noise(&mut features, noise, rng);
    Raw { features, labels }
}

fn spirals<R: Rng>(n: usize, noise: f64, arms: usize, rng: &mut R) -> Raw {
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % arms;
        let t: f64 = rng.random_range(0.05..1.0);
        let theta = 2.0 * PI * class as f64 / arms as f64 + 1.75 * 2.0 * PI * t;
        features.push(vec![t * theta.cos(), t * theta.sin()]);
        labels.push(class);
    }
    add_noise(&mut features, noise * 0.5, rng);
    Raw { features, labels }
}

fn gaussian_blobs<R: Rng>(n: usize, noise: f64, classes: usize, separation: f64, rng: &mut R) -> Raw {
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = 2.0 * PI * class as f64 / classes as f64;
        features.push(vec![separation * angle.cos(), separation * angle.sin()]);
        labels.push(class);
    }
    add_noise(&mut features, noise, rng);
    Raw { features, labels }
}

fn add_noise<R: Rng>(features: &mut [Vec<f64>], std: f64, rng: &mut R) {
    if std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite noise level");
    for row in features {
        for v in row {
            *v += normal.sample(rng);
        }
    }
}

fn check_params(samples: usize, noise: f64, classes: usize) -> Result<(), DataError> {
    if samples < 3 {
        return Err(DataError::InvalidParams(format!("need at least 3 samples, got {samples}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(DataError::InvalidParams(format!("noise must be >= 0, got {noise}")));
    }
    if classes < 2 {
        return Err(DataError::InvalidParams(format!("need at least 2 classes, got {classes}")));
    }
    Ok(())
}

/// Synthesizes a dataset, shuffles it with `seed` and splits it.
pub fn generate_dataset(spec: &DatasetSpec, split: &SplitFractions, seed: u64) -> Result<DatasetSplit, DataError> {
    split.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = match *spec {
        DatasetSpec::TwoMoons { samples, noise } => {
            check_params(samples, noise, 2)?;
            two_moons(samples, noise, &mut rng)
        }
        DatasetSpec::Spirals { samples, noise, arms } => {
            check_params(samples, noise, arms)?;
            spirals(samples, noise, arms, &mut rng)
        }
        DatasetSpec::GaussianBlobs {
            samples,
            noise,
            classes,
            separation,
        } => {
            check_params(samples, noise, classes)?;
            if !separation.is_finite() || separation <= 0.0 {
                return Err(DataError::InvalidParams(format!("separation must be > 0, got {separation}")));
            }
            gaussian_blobs(samples, noise, classes, separation, &mut rng)
        }
        DatasetSpec::Csv { ref path, ref label_column } => {
            return load_csv_dataset(Path::new(path), label_column, split, seed);
        }
    };
    let mut order: Vec<usize> = (0..raw.labels.len()).collect();
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = split.sizes(order.len());
    let parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    assemble(&raw, parts)
}

fn assemble(raw: &Raw, parts: [Vec<usize>; 3]) -> Result<DatasetSplit, DataError> {
    for (name, p) in ["train", "val", "test"].iter().zip(&parts) {
        if p.is_empty() {
            return Err(DataError::EmptySplit(name));
        }
    }
    let d = raw.features[0].len();
    let train = &parts[0];
    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(&raw.features[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut std = vec![0.0; d];
    for &i in train {
        for ((s, v), m) in std.iter_mut().zip(&raw.features[i]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| {
        *s = (*s / train.len() as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    });
    let num_classes = raw.labels.iter().max().map_or(0, |m| m + 1).max(2);
    let build = |idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            for k in 0..d {
                data.push((raw.features[i][k] - mean[k]) / std[k]);
            }
        }
        let labels = idx.iter().map(|&i| raw.labels[i]).collect();
        Samples::new(Tensor::matrix(idx.len(), d, data).expect("rectangular"), labels).expect("matching lengths")
    };
    Ok(DatasetSplit {
        train: build(&parts[0]),
        val: build(&parts[1]),
        test: build(&parts[2]),
        num_classes,
    })
}

/// Reads a numeric CSV dataset with a header row.
pub fn load_csv_dataset(
    path: &Path,
    label_column: &str,
    split: &SplitFractions,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_at = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string(), shown.clone()))?;
    let split_at = headers.iter().position(|h| h == "split");
    let mut raw = Raw {
        features: Vec::new(),
        labels: Vec::new(),
    };
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row = row + 1;
        if record.len() != headers.len() {
            return Err(DataError::Ragged {
                path: shown,
                row,
                expected: headers.len(),
                got: record.len(),
            });
        }
        let mut features = Vec::with_capacity(headers.len());
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_at {
                let label = field.parse::<usize>().map_err(|_| DataError::BadLabel {
                    path: shown.clone(),
                    row,
                    value: field.to_string(),
                })?;
                raw.labels.push(label);
            } else if Some(col) == split_at {
                let part = match field {
                    "train" => 0,
                    "val" => 1,
                    "test" => 2,
                    _ => {
                        return Err(DataError::BadSplitName {
                            path: shown,
                            row,
                            value: field.to_string(),
                        })
                    }
                };
                assigned[part].push(raw.features.len());
            } else {
                features.push(field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    DataError::NonNumeric {
                        path: shown.clone(),
                        row,
                        column: headers[col].clone(),
                        value: field.to_string(),
                    }
                })?);
            }
        }
        raw.features.push(features);
    }
    if raw.features.is_empty() || raw.features[0].is_empty() {
        return Err(DataError::InvalidParams(format!("{shown}: no feature rows")));
    }
    if split_at.is_some() {
        return assemble(&raw, assigned);
    }
    split.validate()?;
    let mut order: Vec<usize> = (0..raw.labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split.sizes(order.len());
    let parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    assemble(&raw, parts)
}

/// Writes a split as CSV with `x0..`, `label` and `split` columns, readable by
/// [`load_csv_dataset`].
pub fn write_csv_dataset(split: &DatasetSplit, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let d = split.num_features();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    header.push("label".into());
    header.push("split".into());
    w.write_record(&header)?;
    for (name, s) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for (row, &label) in s.features.data().chunks(d).zip(&s.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.to_string());
            rec.push(name.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
