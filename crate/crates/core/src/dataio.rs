//! Dataset ingestion, seeded splitting, standardization and synthetic
//! generators.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losskernels::{Dataset, Task};
use crate::numkit::{dot, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "classification" => Ok(TaskKind::Classification),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// How to read a numeric CSV. Classification labels are encoded in order of
/// first appearance, so `b,a,b` becomes `0,1,0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: TargetColumn,
    pub task: TaskKind,
    pub has_header: bool,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parses comma-delimited numeric data. Reported row numbers are 1-based file
/// lines; column numbers are 1-based.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let mut header: Option<Vec<String>> = None;
    let mut line = 0usize;
    if schema.has_header {
        match records.next() {
            Some(r) => {
                line += 1;
                header = Some(r?.iter().map(str::to_string).collect());
            }
            None => return Err(Error::EmptyDataset),
        }
    }

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for r in records {
        let r = r?;
        if r.len() == 1 && r.get(0).is_some_and(str::is_empty) {
            continue;
        }
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ncols = rows[0].len();
    let target_idx = match &schema.target {
        TargetColumn::Index(i) if *i < ncols => *i,
        TargetColumn::Index(i) => {
            return Err(Error::Schema(format!("target column {i} out of range ({ncols} columns)")))
        }
        TargetColumn::Name(name) => match &header {
            Some(h) => h
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Schema(format!("target column {name:?} not found in header")))?,
            None => {
                return Err(Error::Schema(format!(
                    "target column {name:?} given by name but the file has no header"
                )))
            }
        },
    };
    if ncols < 2 {
        return Err(Error::Schema("need at least one feature column besides the target".into()));
    }

    let mut entries = Vec::with_capacity(rows.len() * (ncols - 1));
    let mut targets = Vec::with_capacity(rows.len());
    let mut labels: HashMap<String, usize> = HashMap::new();
    for (k, rec) in rows.iter().enumerate() {
        let row_no = line + k + 1;
        for (j, cell) in rec.iter().enumerate() {
            if j == target_idx {
                match schema.task {
                    TaskKind::Regression => targets.push(parse_cell(cell, row_no, j)?),
                    TaskKind::Classification => {
                        let next = labels.len();
                        let code = *labels.entry(cell.to_string()).or_insert(next);
                        targets.push(code as f64);
                    }
                }
            } else {
                entries.push(parse_cell(cell, row_no, j)?);
            }
        }
    }
    let task = match schema.task {
        TaskKind::Regression => Task::Regression,
        TaskKind::Classification => {
            if labels.len() < 2 {
                return Err(Error::Schema("classification target has fewer than 2 classes".into()));
            }
            Task::Classification {
                classes: labels.len(),
            }
        }
    };
    Dataset::new(
        DenseMatrix::from_row_major(rows.len(), ncols - 1, entries)?,
        targets,
        task,
    )
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            col: col + 1,
            value: cell.to_string(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_remainder: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction_of_remainder: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    for (name, f) in [
        ("test_fraction", spec.test_fraction),
        ("val_fraction_of_remainder", spec.val_fraction_of_remainder),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    if n < 5 {
        return Err(Error::Config(format!("need at least 5 rows to split, got {n}")));
    }
    let n_test = (n as f64 * spec.test_fraction).floor() as usize;
    let n_val = (spec.val_fraction_of_remainder * (n - n_test) as f64).floor() as usize;
    let n_train = n - n_test - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::Config(format!(
            "split of {n} rows leaves an empty part (train {n_train}, validation {n_val}, test {n_test})"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = perm[..n_test].to_vec();
    let validation = perm[n_test..n_test + n_val].to_vec();
    let train = perm[n_test + n_val..].to_vec();
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let indices = split_indices(data.len(), spec)?;
    Ok(Splits {
        train: data.select(&indices.train)?,
        validation: data.select(&indices.validation)?,
        test: data.select(&indices.test)?,
        indices,
    })
}

/// Per-column mean and standard deviation, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let (n, d) = (train.len(), train.n_features());
        let mut means = vec![0.0; d];
        for i in 0..n {
            for (m, x) in means.iter_mut().zip(train.x(i)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut sds = vec![0.0; d];
        for i in 0..n {
            for (j, x) in train.x(i).iter().enumerate() {
                sds[j] += (x - means[j]).powi(2);
            }
        }
        for (j, s) in sds.iter_mut().enumerate() {
            *s = (*s / n as f64).sqrt();
            // constant column: centred to zero, scale left alone
            if *s <= 1e-12 * (1.0 + means[j].abs()) {
                *s = 1.0;
            }
        }
        Self { means, sds }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let d = self.means.len();
        if data.n_features() != d {
            return Err(Error::DimensionMismatch {
                context: "Standardizer::apply",
                expected: d,
                actual: data.n_features(),
            });
        }
        let mut entries = Vec::with_capacity(data.len() * d);
        for i in 0..data.len() {
            for (j, x) in data.x(i).iter().enumerate() {
                entries.push((x - self.means[j]) / self.sds[j]);
            }
        }
        data.with_features(DenseMatrix::from_row_major(data.len(), d, entries)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    OutlierRegression,
    HeteroRegression,
    TwoGaussians,
    MulticlassBlobs,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::OutlierRegression => "outlier_regression",
            SyntheticKind::HeteroRegression => "hetero_regression",
            SyntheticKind::TwoGaussians => "two_gaussians",
            SyntheticKind::MulticlassBlobs => "multiclass_blobs",
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outlier_regression" => Ok(Self::OutlierRegression),
            "hetero_regression" => Ok(Self::HeteroRegression),
            "two_gaussians" => Ok(Self::TwoGaussians),
            "multiclass_blobs" => Ok(Self::MulticlassBlobs),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Base noise standard deviation (regression kinds).
    pub noise_sd: f64,
    /// Fraction of points carrying inflated noise (`outlier_regression`).
    pub outlier_fraction: f64,
    /// Noise inflation factor for outliers.
    pub outlier_scale: f64,
    /// Log-scale spread of per-point noise (`hetero_regression`):
    /// `sd_i = noise_sd * exp(spread * u_i)`, `u_i ~ N(0, 1)`.
    pub hetero_spread: f64,
    /// Distance between the two class means (`two_gaussians`).
    pub separation: f64,
    /// Fraction of labels flipped (`two_gaussians`).
    pub label_noise: f64,
    pub classes: usize,
    /// Standard deviation of class centres (`multiclass_blobs`).
    pub blob_spread: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            noise_sd: 1.0,
            outlier_fraction: 0.1,
            outlier_scale: 10.0,
            hetero_spread: 1.0,
            separation: 2.0,
            label_noise: 0.1,
            classes: 3,
            blob_spread: 3.0,
        }
    }
}

/// A generated dataset plus the ground truth used to produce it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: Dataset,
    /// Per-point noise standard deviation (regression kinds).
    pub noise_sd: Option<Vec<f64>>,
    pub coefficients: Option<Vec<f64>>,
}

pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    seed: u64,
    params: &SyntheticParams,
) -> Result<Dataset> {
    Ok(generate(kind, n, d, seed, params)?.data)
}

pub fn generate(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    seed: u64,
    params: &SyntheticParams,
) -> Result<Synthetic> {
    if n == 0 || d == 0 {
        return Err(Error::Config(format!("synthetic data needs n >= 1 and d >= 1 (got n={n}, d={d})")));
    }
    if !(0.0..=1.0).contains(&params.outlier_fraction) || !(0.0..=1.0).contains(&params.label_noise) {
        return Err(Error::Config("fractions must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    match kind {
        SyntheticKind::OutlierRegression | SyntheticKind::HeteroRegression => {
            let beta: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let rows: Vec<f64> = (0..n * d).map(|_| normal(&mut rng)).collect();
            let sds: Vec<f64> = if kind == SyntheticKind::OutlierRegression {
                let n_out = (params.outlier_fraction * n as f64).round() as usize;
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let mut sds = vec![params.noise_sd; n];
                for &i in &order[..n_out] {
                    sds[i] = params.noise_sd * params.outlier_scale;
                }
                sds
            } else {
                (0..n)
                    .map(|_| params.noise_sd * (params.hetero_spread * normal(&mut rng)).exp())
                    .collect()
            };
            let targets: Vec<f64> = (0..n)
                .map(|i| dot(&rows[i * d..(i + 1) * d], &beta) + sds[i] * normal(&mut rng))
                .collect();
            Ok(Synthetic {
                data: Dataset::new(DenseMatrix::from_row_major(n, d, rows)?, targets, Task::Regression)?,
                noise_sd: Some(sds),
                coefficients: Some(beta),
            })
        }
        SyntheticKind::TwoGaussians => {
            let shift = params.separation / 2.0 / (d as f64).sqrt();
            let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            labels.shuffle(&mut rng);
            let mut rows = Vec::with_capacity(n * d);
            for &c in &labels {
                let sign = if c == 1 { 1.0 } else { -1.0 };
                for _ in 0..d {
                    rows.push(sign * shift + normal(&mut rng));
                }
            }
            let targets: Vec<f64> = labels
                .iter()
                .map(|&c| {
                    let flip = params.label_noise > 0.0 && rng.random::<f64>() < params.label_noise;
                    (if flip { 1 - c } else { c }) as f64
                })
                .collect();
            Ok(Synthetic {
                data: Dataset::new(
                    DenseMatrix::from_row_major(n, d, rows)?,
                    targets,
                    Task::Classification { classes: 2 },
                )?,
                noise_sd: None,
                coefficients: None,
            })
        }
        SyntheticKind::MulticlassBlobs => {
            let k = params.classes;
            if k < 2 {
                return Err(Error::Config("multiclass_blobs needs at least 2 classes".into()));
            }
            let centres: Vec<f64> = (0..k * d).map(|_| params.blob_spread * normal(&mut rng)).collect();
            let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            labels.shuffle(&mut rng);
            let mut rows = Vec::with_capacity(n * d);
            for &c in &labels {
                for j in 0..d {
                    rows.push(centres[c * d + j] + normal(&mut rng));
                }
            }
            Ok(Synthetic {
                data: Dataset::new(
                    DenseMatrix::from_row_major(n, d, rows)?,
                    labels.iter().map(|&c| c as f64).collect(),
                    Task::Classification { classes: k },
                )?,
                noise_sd: None,
                coefficients: None,
            })
        }
    }
}
