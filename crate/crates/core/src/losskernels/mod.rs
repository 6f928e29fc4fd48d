//! Per-point convex loss kernels with an L2 term, plus the Newton ERM solver.
//!
//! Every kernel evaluates `l(z, theta) + (lambda / 2) * ||theta||^2`, so the
//! regularizer is part of each point's loss and survives averaging unchanged.
//! Softmax parameters are laid out class-major: `k` consecutive blocks of
//! length `d`.

mod dataset;
mod solver;

pub use dataset::{Datapoint, Dataset, Task};
pub use solver::{fit_erm, FittedModel, HessianSolver, HinvApplier, SolverSettings};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, DenseMatrix};

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_DENSE_THRESHOLD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
    Softmax { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossKernel {
    pub kind: LossKind,
    pub lambda: f64,
    /// Feature dimension `d` of the datapoints this kernel accepts.
    pub features: usize,
}

impl LossKernel {
    pub fn new(kind: LossKind, lambda: f64, features: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if features == 0 {
            return Err(Error::Config("kernel needs at least one feature".into()));
        }
        if let LossKind::Softmax { classes } = kind {
            if classes < 2 {
                return Err(Error::Config("softmax needs at least 2 classes".into()));
            }
        }
        Ok(Self {
            kind,
            lambda,
            features,
        })
    }

    pub fn squared(lambda: f64, features: usize) -> Result<Self> {
        Self::new(LossKind::Squared, lambda, features)
    }

    pub fn logistic(lambda: f64, features: usize) -> Result<Self> {
        Self::new(LossKind::Logistic, lambda, features)
    }

    pub fn softmax(lambda: f64, features: usize, classes: usize) -> Result<Self> {
        Self::new(LossKind::Softmax { classes }, lambda, features)
    }

    /// The natural kernel for a dataset: squared for regression, logistic
    /// for two classes, softmax otherwise.
    pub fn for_task(task: Task, lambda: f64, features: usize) -> Result<Self> {
        match task {
            Task::Regression => Self::squared(lambda, features),
            Task::Classification { classes: 2 } => Self::logistic(lambda, features),
            Task::Classification { classes } => Self::softmax(lambda, features, classes),
        }
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            LossKind::Softmax { classes } => self.features * classes,
            _ => self.features,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
            LossKind::Softmax { .. } => "softmax",
        }
    }

    fn check(&self, z: &Datapoint<'_>, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel parameter",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        if z.x.len() != self.features {
            return Err(Error::DimensionMismatch {
                context: "kernel datapoint features",
                expected: self.features,
                actual: z.x.len(),
            });
        }
        if let LossKind::Softmax { classes } = self.kind {
            if z.y < 0.0 || z.y >= classes as f64 || z.y.fract() != 0.0 {
                return Err(Error::Contract(format!("softmax label {} outside [0, {classes})", z.y)));
            }
        }
        Ok(())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.features {
            return Err(Error::DimensionMismatch {
                context: "kernel vs dataset features",
                expected: self.features,
                actual: data.n_features(),
            });
        }
        match (self.kind, data.task()) {
            (LossKind::Squared, _) => Ok(()),
            (LossKind::Logistic, Task::Classification { classes: 2 }) => Ok(()),
            (LossKind::Softmax { classes }, Task::Classification { classes: k }) if k <= classes => {
                Ok(())
            }
            (kind, task) => Err(Error::Contract(format!(
                "kernel {kind:?} cannot be used with task {task:?}"
            ))),
        }
    }

    /// `l(z, theta) + (lambda/2)||theta||^2`
    pub fn loss(&self, z: &Datapoint<'_>, theta: &[f64]) -> Result<f64> {
        self.check(z, theta)?;
        Ok(self.loss_unchecked(z, theta))
    }

    pub fn grad(&self, z: &Datapoint<'_>, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(z, theta)?;
        let mut g = vec![0.0; self.dim()];
        self.add_grad(z, theta, 1.0, &mut g);
        Ok(g)
    }

    /// Subset-averaged regularized Hessian applied to `v`.
    pub fn hess_vec(
        &self,
        data: &Dataset,
        subset: &[usize],
        theta: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_subset(data, subset, theta)?;
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "hess_vec direction",
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(self.hess_vec_unchecked(data, subset, theta, v))
    }

    pub fn full_hessian(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> Result<DenseMatrix> {
        self.full_hessian_with_threshold(data, subset, theta, DEFAULT_DENSE_THRESHOLD)
    }

    pub fn full_hessian_with_threshold(
        &self,
        data: &Dataset,
        subset: &[usize],
        theta: &[f64],
        threshold: usize,
    ) -> Result<DenseMatrix> {
        if self.dim() > threshold {
            return Err(Error::TooLarge {
                dim: self.dim(),
                threshold,
            });
        }
        self.check_subset(data, subset, theta)?;
        Ok(self.full_hessian_unchecked(data, subset, theta))
    }

    /// Mean regularized loss over `subset`.
    pub fn mean_loss(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> Result<f64> {
        self.check_subset(data, subset, theta)?;
        Ok(self.mean_loss_unchecked(data, subset, theta))
    }

    /// Gradient of the mean regularized loss over `subset`.
    pub fn mean_grad(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_subset(data, subset, theta)?;
        Ok(self.mean_grad_unchecked(data, subset, theta))
    }

    pub(crate) fn check_subset(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::Contract("empty subset".into()));
        }
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel parameter",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        self.check_dataset(data)?;
        if let Some(&bad) = subset.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Contract(format!(
                "subset index {bad} out of range ({} rows)",
                data.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn loss_unchecked(&self, z: &Datapoint<'_>, theta: &[f64]) -> f64 {
        let reg = 0.5 * self.lambda * dot(theta, theta);
        let d = self.features;
        let data_term = match self.kind {
            LossKind::Squared => {
                let r = dot(theta, z.x) - z.y;
                0.5 * r * r
            }
            LossKind::Logistic => softplus(-signed_label(z.y) * dot(theta, z.x)),
            LossKind::Softmax { classes } => {
                let logits: Vec<f64> = (0..classes).map(|c| dot(&theta[c * d..(c + 1) * d], z.x)).collect();
                let y = z.y as usize;
                log_sum_exp(&logits) - logits[y]
            }
        };
        data_term + reg
    }

    /// `out += scale * grad(z, theta)`
    pub(crate) fn add_grad(&self, z: &Datapoint<'_>, theta: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.features;
        match self.kind {
            LossKind::Squared => {
                let r = dot(theta, z.x) - z.y;
                axpy(scale * r, z.x, out);
            }
            LossKind::Logistic => {
                let y = signed_label(z.y);
                let m = y * dot(theta, z.x);
                axpy(-scale * sigmoid(-m) * y, z.x, out);
            }
            LossKind::Softmax { classes } => {
                let p = self.softmax_probs(z.x, theta, classes);
                let y = z.y as usize;
                for c in 0..classes {
                    let coef = p[c] - if c == y { 1.0 } else { 0.0 };
                    axpy(scale * coef, z.x, &mut out[c * d..(c + 1) * d]);
                }
            }
        }
        if self.lambda != 0.0 {
            axpy(scale * self.lambda, theta, out);
        }
    }

    /// `out += scale * (d^2 l / d theta^2) v` without the regularizer.
    fn add_data_hess_vec(&self, z: &Datapoint<'_>, theta: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.features;
        match self.kind {
            LossKind::Squared => axpy(scale * dot(v, z.x), z.x, out),
            LossKind::Logistic => {
                let s = sigmoid(dot(theta, z.x));
                axpy(scale * s * (1.0 - s) * dot(v, z.x), z.x, out);
            }
            LossKind::Softmax { classes } => {
                let p = self.softmax_probs(z.x, theta, classes);
                let t: Vec<f64> = (0..classes).map(|c| dot(&v[c * d..(c + 1) * d], z.x)).collect();
                let pt = dot(&p, &t);
                for c in 0..classes {
                    axpy(scale * p[c] * (t[c] - pt), z.x, &mut out[c * d..(c + 1) * d]);
                }
            }
        }
    }

    fn add_data_hessian(&self, z: &Datapoint<'_>, theta: &[f64], scale: f64, h: &mut DenseMatrix) {
        let d = self.features;
        let x = z.x;
        // upper triangle of a diagonal block only; symmetrized later
        fn rank_one(h: &mut DenseMatrix, x: &[f64], weight: f64, off: usize) {
            if weight == 0.0 {
                return;
            }
            let d = x.len();
            for a in 0..d {
                let wa = weight * x[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..d {
                    h.add_at(off + a, off + b, wa * x[b]);
                }
            }
        }
        match self.kind {
            LossKind::Squared => rank_one(h, x, scale, 0),
            LossKind::Logistic => {
                let s = sigmoid(dot(theta, x));
                rank_one(h, x, scale * s * (1.0 - s), 0);
            }
            LossKind::Softmax { classes } => {
                let p = self.softmax_probs(x, theta, classes);
                for c in 0..classes {
                    for c2 in c..classes {
                        let w = if c == c2 { p[c] * (1.0 - p[c]) } else { -p[c] * p[c2] };
                        if c == c2 {
                            rank_one(h, x, scale * w, c * d);
                        } else {
                            // off-diagonal blocks are full (not triangular) rank-one terms
                            for a in 0..d {
                                for b in 0..d {
                                    h.add_at(c * d + a, c2 * d + b, scale * w * x[a] * x[b]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn mean_loss_unchecked(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> f64 {
        let s: f64 = subset.iter().map(|&i| self.loss_unchecked(&data.point(i), theta)).sum();
        s / subset.len() as f64
    }

    pub(crate) fn mean_grad_unchecked(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        let w = 1.0 / subset.len() as f64;
        for &i in subset {
            self.add_grad(&data.point(i), theta, w, &mut g);
        }
        g
    }

    pub(crate) fn hess_vec_unchecked(
        &self,
        data: &Dataset,
        subset: &[usize],
        theta: &[f64],
        v: &[f64],
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let w = 1.0 / subset.len() as f64;
        for &i in subset {
            self.add_data_hess_vec(&data.point(i), theta, v, w, &mut out);
        }
        if self.lambda != 0.0 {
            axpy(self.lambda, v, &mut out);
        }
        out
    }

    pub(crate) fn full_hessian_unchecked(&self, data: &Dataset, subset: &[usize], theta: &[f64]) -> DenseMatrix {
        let p = self.dim();
        let mut h = DenseMatrix::zeros(p, p);
        let w = 1.0 / subset.len() as f64;
        for &i in subset {
            self.add_data_hessian(&data.point(i), theta, w, &mut h);
        }
        for i in 0..p {
            h.add_at(i, i, self.lambda);
        }
        h.symmetrize_from_upper();
        h
    }

    fn softmax_probs(&self, x: &[f64], theta: &[f64], classes: usize) -> Vec<f64> {
        let d = self.features;
        let logits: Vec<f64> = (0..classes).map(|c| dot(&theta[c * d..(c + 1) * d], x)).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Predictive class probabilities for classification kernels.
    pub fn predict_proba(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        match self.kind {
            LossKind::Squared => vec![dot(theta, x)],
            LossKind::Logistic => {
                let p = sigmoid(dot(theta, x));
                vec![1.0 - p, p]
            }
            LossKind::Softmax { classes } => self.softmax_probs(x, theta, classes),
        }
    }
}

/// Binary labels: anything above 0.5 is the positive class.
#[inline]
fn signed_label(y: f64) -> f64 {
    if y > 0.5 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}
