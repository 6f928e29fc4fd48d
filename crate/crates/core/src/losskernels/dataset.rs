use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// A single observation borrowed from a [`Dataset`]. For classification the
/// target carries the class index as a real number.
#[derive(Debug, Clone, Copy)]
pub struct Datapoint<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

impl<'a> Datapoint<'a> {
    pub fn new(x: &'a [f64], y: f64) -> Self {
        Self { x, y }
    }
}

/// Feature matrix, target vector and task kind. Cloning is cheap: the
/// storage is shared.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Arc<DenseMatrix>,
    targets: Arc<Vec<f64>>,
    task: Task,
}

impl Dataset {
    pub fn new(features: DenseMatrix, targets: Vec<f64>, task: Task) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if targets.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new (targets)",
                expected: features.rows(),
                actual: targets.len(),
            });
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("feature matrix contains non-finite values".into()));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("target {i} is not finite")));
        }
        if let Task::Classification { classes } = task {
            if classes < 2 {
                return Err(Error::Contract(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
            for (i, &y) in targets.iter().enumerate() {
                if y < 0.0 || y.fract() != 0.0 || y >= classes as f64 {
                    return Err(Error::Contract(format!(
                        "label {y} at row {i} outside [0, {classes})"
                    )));
                }
            }
        }
        Ok(Self {
            features: Arc::new(features),
            targets: Arc::new(targets),
            task,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>, task: Task) -> Result<Self> {
        Self::new(DenseMatrix::from_rows(rows)?, targets, task)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.targets[i]
    }

    #[inline]
    pub fn point(&self, i: usize) -> Datapoint<'_> {
        Datapoint {
            x: self.features.row(i),
            y: self.targets[i],
        }
    }

    /// Copies the listed rows (in order, repeats allowed) into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.n_features();
        let mut entries = Vec::with_capacity(indices.len() * d);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!(
                    "row index {i} out of range for dataset of {} rows",
                    self.len()
                )));
            }
            entries.extend_from_slice(self.x(i));
            targets.push(self.y(i));
        }
        Dataset::new(
            DenseMatrix::from_row_major(indices.len(), d, entries)?,
            targets,
            self.task,
        )
    }

    /// Appends a constant-one column so linear kernels get an intercept.
    pub fn with_intercept(&self) -> Dataset {
        let (n, d) = (self.len(), self.n_features());
        let mut entries = Vec::with_capacity(n * (d + 1));
        for i in 0..n {
            entries.extend_from_slice(self.x(i));
            entries.push(1.0);
        }
        Dataset {
            features: Arc::new(DenseMatrix::from_row_major(n, d + 1, entries).expect("shape")),
            targets: Arc::clone(&self.targets),
            task: self.task,
        }
    }

    /// Replaces the feature matrix, keeping targets and task.
    pub fn with_features(&self, features: DenseMatrix) -> Result<Dataset> {
        if features.rows() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::with_features",
                expected: self.len(),
                actual: features.rows(),
            });
        }
        Ok(Dataset {
            features: Arc::new(features),
            targets: Arc::clone(&self.targets),
            task: self.task,
        })
    }
}
