//! Tree ensembles used as non-differentiable transfer models, and the
//! metrics they are scored with.
//!
//! Splits come from an exhaustive scan of sample midpoints per feature:
//! variance reduction for regression, Gini impurity for classification.
//! Ties go to the lowest feature index, then the lowest threshold.

use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losskernels::{Dataset, Task};
use crate::numkit::DenseMatrix;

pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    RandomForest,
    GradientBoosted,
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_forest" => Ok(Self::RandomForest),
            "gradient_boosted" => Ok(Self::GradientBoosted),
            other => Err(Error::Config(format!(
                "unknown evaluator '{other}' (expected random_forest or gradient_boosted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleConfig {
    pub mode: EnsembleMode,
    pub n_trees: usize,
    /// Fraction of features considered: per split for forests, per tree for boosting.
    pub max_features_fraction: f64,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Row resampling with replacement per tree (forest mode only).
    pub bootstrap: bool,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TreeEnsembleConfig {
    fn default() -> Self {
        Self {
            mode: EnsembleMode::RandomForest,
            n_trees: 10,
            max_features_fraction: 1.0,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            max_depth: 6,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl TreeEnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if !(self.max_features_fraction > 0.0 && self.max_features_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "max_features_fraction must lie in (0, 1], got {}",
                self.max_features_fraction
            )));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    fn features_per_draw(&self, d: usize) -> usize {
        ((self.max_features_fraction * d as f64).ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary tree stored as an arena; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

/// What a tree fits: real targets, or class labels with `k` classes.
enum Target<'a> {
    Real(&'a [f64]),
    Labels { y: &'a [f64], k: usize },
}

struct Builder<'a> {
    x: &'a DenseMatrix,
    target: Target<'a>,
    cfg: &'a TreeEnsembleConfig,
    /// Features fixed for the whole tree; `None` draws a subset per split.
    tree_features: Option<Vec<usize>>,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        match self.target {
            Target::Real(y) => vec![rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64],
            Target::Labels { y, k } => {
                let mut p = vec![0.0; k];
                for &r in rows {
                    p[y[r] as usize] += 1.0;
                }
                p.iter_mut().for_each(|v| *v /= rows.len() as f64);
                p
            }
        }
    }

    /// Total impurity of the node: sum of squared deviations, or `n * gini`.
    fn impurity(&self, rows: &[usize]) -> f64 {
        match self.target {
            Target::Real(y) => {
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
                rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
            }
            Target::Labels { y, k } => {
                let mut counts = vec![0.0; k];
                for &r in rows {
                    counts[y[r] as usize] += 1.0;
                }
                gini_total(&counts, rows.len() as f64)
            }
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        if let Some(f) = &self.tree_features {
            return f.clone();
        }
        let d = self.x.cols();
        let k = self.cfg.features_per_draw(d);
        if k == d {
            return (0..d).collect();
        }
        let mut f = index::sample(&mut self.rng, d, k).into_vec();
        f.sort_unstable();
        f
    }

    fn best_split(&mut self, rows: &[usize], parent: f64) -> Option<SplitChoice> {
        let min_leaf = self.cfg.min_samples_leaf;
        let n = rows.len();
        let mut best: Option<SplitChoice> = None;
        let mut order = rows.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)));
            let mut consider = |i: usize, child: f64| {
                let (lo, hi) = (self.x.get(order[i], f), self.x.get(order[i + 1], f));
                if lo == hi || i + 1 < min_leaf || n - i - 1 < min_leaf {
                    return;
                }
                let gain = parent - child;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: lo + (hi - lo) / 2.0,
                        gain,
                    });
                }
            };
            match self.target {
                Target::Real(y) => {
                    let (total, total_sq) = order.iter().fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
                    let (mut s, mut q) = (0.0, 0.0);
                    for i in 0..n - 1 {
                        let v = y[order[i]];
                        s += v;
                        q += v * v;
                        let nl = (i + 1) as f64;
                        let nr = (n - i - 1) as f64;
                        let sse_l = q - s * s / nl;
                        let sse_r = (total_sq - q) - (total - s) * (total - s) / nr;
                        consider(i, sse_l + sse_r);
                    }
                }
                Target::Labels { y, k } => {
                    let mut right = vec![0.0; k];
                    for &r in &order {
                        right[y[r] as usize] += 1.0;
                    }
                    let mut left = vec![0.0; k];
                    for i in 0..n - 1 {
                        let c = y[order[i]] as usize;
                        left[c] += 1.0;
                        right[c] -= 1.0;
                        let nl = (i + 1) as f64;
                        consider(i, gini_total(&left, nl) + gini_total(&right, n as f64 - nl));
                    }
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent)
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: self.leaf_value(&rows),
        });
        if depth >= self.cfg.max_depth || rows.len() < self.cfg.min_samples_split {
            return id;
        }
        let parent = self.impurity(&rows);
        if parent <= 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows, parent) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&row| self.x.get(row, split.feature) <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn gini_total(counts: &[f64], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(tree as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub config: TreeEnsembleConfig,
    pub task: Task,
    pub n_features: usize,
    /// Starting prediction in boosted mode (training mean); empty for forests.
    pub base_score: Vec<f64>,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictions {
    Values(Vec<f64>),
    /// One row of class probabilities per probe row.
    Probabilities(Vec<Vec<f64>>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Values(v) => v.len(),
            Predictions::Probabilities(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fits a forest or a boosted ensemble on `data[subset]`. Deterministic in
/// `cfg.seed`. Boosting supports regression only.
pub fn fit_tree_ensemble(cfg: &TreeEnsembleConfig, data: &Dataset, subset: &[usize]) -> Result<TreeEnsemble> {
    cfg.validate()?;
    if subset.is_empty() {
        return Err(Error::Contract("cannot fit a tree ensemble on an empty subset".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Contract(format!("subset index {bad} out of range")));
    }
    let x = data.features();
    let task = data.task();
    match cfg.mode {
        EnsembleMode::RandomForest => {
            let target = |_: ()| match task {
                Task::Regression => Target::Real(data.targets()),
                Task::Classification { classes } => Target::Labels {
                    y: data.targets(),
                    k: classes,
                },
            };
            let trees = (0..cfg.n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, t));
                    let rows: Vec<usize> = if cfg.bootstrap {
                        (0..subset.len()).map(|_| subset[rng.random_range(0..subset.len())]).collect()
                    } else {
                        subset.to_vec()
                    };
                    let mut b = Builder {
                        x,
                        target: target(()),
                        cfg,
                        tree_features: None,
                        rng,
                        nodes: Vec::new(),
                    };
                    b.build(rows, 0);
                    Tree { nodes: b.nodes }
                })
                .collect();
            Ok(TreeEnsemble {
                config: *cfg,
                task,
                n_features: x.cols(),
                base_score: Vec::new(),
                trees,
            })
        }
        EnsembleMode::GradientBoosted => {
            if task.is_classification() {
                return Err(Error::Config(
                    "gradient_boosted mode supports regression only; use random_forest for classification".into(),
                ));
            }
            let y = data.targets();
            let base = subset.iter().map(|&i| y[i]).sum::<f64>() / subset.len() as f64;
            let mut fitted = vec![base; data.len()];
            let mut residual = vec![0.0; data.len()];
            let mut trees = Vec::with_capacity(cfg.n_trees);
            let d = x.cols();
            for t in 0..cfg.n_trees {
                for &i in subset {
                    residual[i] = y[i] - fitted[i];
                }
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, t));
                let k = cfg.features_per_draw(d);
                let mut feats = if k == d {
                    (0..d).collect()
                } else {
                    index::sample(&mut rng, d, k).into_vec()
                };
                feats.sort_unstable();
                let mut b = Builder {
                    x,
                    target: Target::Real(&residual),
                    cfg,
                    tree_features: Some(feats),
                    rng,
                    nodes: Vec::new(),
                };
                b.build(subset.to_vec(), 0);
                let tree = Tree { nodes: b.nodes };
                for &i in subset {
                    fitted[i] += cfg.learning_rate * tree.predict_row(x.row(i))[0];
                }
                trees.push(tree);
            }
            Ok(TreeEnsemble {
                config: *cfg,
                task,
                n_features: d,
                base_score: vec![base],
                trees,
            })
        }
    }
}

impl TreeEnsemble {
    fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        match self.config.mode {
            EnsembleMode::RandomForest => {
                let mut acc = vec![0.0; self.trees[0].predict_row(x).len()];
                for t in &self.trees {
                    for (a, v) in acc.iter_mut().zip(t.predict_row(x)) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= self.trees.len() as f64);
                acc
            }
            EnsembleMode::GradientBoosted => {
                let mut out = self.base_score[0];
                for t in &self.trees {
                    out += self.config.learning_rate * t.predict_row(x)[0];
                }
                vec![out]
            }
        }
    }

    pub fn predict(&self, features: &DenseMatrix) -> Result<Predictions> {
        if features.rows() > 0 && features.cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                context: "tree ensemble probe features",
                expected: self.n_features,
                actual: features.cols(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..features.rows())
            .into_par_iter()
            .map(|i| self.predict_one(features.row(i)))
            .collect();
        Ok(match self.task {
            Task::Regression => Predictions::Values(rows.into_iter().map(|r| r[0]).collect()),
            Task::Classification { .. } => Predictions::Probabilities(rows),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    Accuracy,
    Logloss,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Scores predictions against targets. `Values` are read as regression
/// outputs for RMSE, as labels for accuracy and as `P(class 1)` for log-loss.
pub fn evaluate(predictions: &Predictions, targets: &[f64], metric: MetricKind) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate predictions vs targets",
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::Contract("cannot evaluate on zero rows".into()));
    }
    let n = targets.len() as f64;
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    match (metric, predictions) {
        (MetricKind::Rmse, Predictions::Values(v)) => Ok(rmse(v, targets)),
        (MetricKind::Rmse, Predictions::Probabilities(_)) => {
            Err(Error::Contract("rmse needs real-valued predictions".into()))
        }
        (MetricKind::Accuracy, Predictions::Values(v)) => {
            Ok(v.iter().zip(targets).filter(|(p, t)| p.round() == **t).count() as f64 / n)
        }
        (MetricKind::Accuracy, Predictions::Probabilities(p)) => {
            Ok(p.iter().zip(targets).filter(|(r, t)| argmax(r) as f64 == **t).count() as f64 / n)
        }
        (MetricKind::Logloss, Predictions::Values(v)) => Ok(v
            .iter()
            .zip(targets)
            .map(|(p, t)| if *t > 0.5 { -clip(*p).ln() } else { -clip(1.0 - p).ln() })
            .sum::<f64>()
            / n),
        (MetricKind::Logloss, Predictions::Probabilities(p)) => {
            let mut total = 0.0;
            for (row, t) in p.iter().zip(targets) {
                let c = *t as usize;
                if c >= row.len() {
                    return Err(Error::Contract(format!("label {t} outside {} classes", row.len())));
                }
                total -= clip(row[c]).ln();
            }
            Ok(total / n)
        }
    }
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> f64 {
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    mse.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn regression(rows: &[Vec<f64>], y: &[f64]) -> Dataset {
        Dataset::from_rows(rows, y.to_vec(), Task::Regression).unwrap()
    }

    fn random_regression(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = rows
            .iter()
            .map(|r| r[0].sin() + 0.5 * r[d - 1] * r[0] + rng.random_range(-0.3..0.3))
            .collect();
        Dataset::from_rows(&rows, y, Task::Regression).unwrap()
    }

    fn values(p: Predictions) -> Vec<f64> {
        match p {
            Predictions::Values(v) => v,
            Predictions::Probabilities(_) => panic!("expected values"),
        }
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let data = regression(&[vec![0.0], vec![1.0], vec![5.0]], &[1.0, 2.0, 6.0]);
        let cfg = TreeEnsembleConfig {
            n_trees: 1,
            max_depth: 0,
            bootstrap: false,
            ..Default::default()
        };
        let e = fit_tree_ensemble(&cfg, &data, &[0, 1, 2]).unwrap();
        let p = values(e.predict(data.features()).unwrap());
        assert!(p.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn separable_pair_splits_perfectly() {
        let data = regression(&[vec![0.0], vec![1.0]], &[0.0, 1.0]);
        let cfg = TreeEnsembleConfig {
            n_trees: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let e = fit_tree_ensemble(&cfg, &data, &[0, 1]).unwrap();
        assert_eq!(values(e.predict(data.features()).unwrap()), vec![0.0, 1.0]);
        match &e.trees[0].nodes[0] {
            TreeNode::Split { feature, threshold, .. } => assert_eq!((*feature, *threshold), (0, 0.5)),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn constant_targets_give_constant_predictor() {
        let data = regression(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], &[0.7; 4]);
        let cfg = TreeEnsembleConfig::default();
        let e = fit_tree_ensemble(&cfg, &data, &[0, 1, 2, 3]).unwrap();
        assert!(e.trees.iter().all(|t| t.leaves() == 1));
        assert!(values(e.predict(data.features()).unwrap()).iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        // both features split the targets identically
        let data = regression(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[0.0, 1.0]);
        let cfg = TreeEnsembleConfig {
            n_trees: 1,
            max_depth: 1,
            bootstrap: false,
            ..Default::default()
        };
        let e = fit_tree_ensemble(&cfg, &data, &[0, 1]).unwrap();
        assert!(matches!(e.trees[0].nodes[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = random_regression(1, 80, 4);
        let subset: Vec<usize> = (0..60).collect();
        for mode in [EnsembleMode::RandomForest, EnsembleMode::GradientBoosted] {
            for bootstrap in [false, true] {
                let cfg = TreeEnsembleConfig {
                    mode,
                    bootstrap,
                    max_features_fraction: 0.5,
                    seed: 9,
                    ..Default::default()
                };
                let a = fit_tree_ensemble(&cfg, &data, &subset).unwrap();
                let b = fit_tree_ensemble(&cfg, &data, &subset).unwrap();
                assert_eq!(a.predict(data.features()).unwrap(), b.predict(data.features()).unwrap());
                assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
            }
        }
    }

    #[test]
    fn tree_constraints_hold() {
        let data = random_regression(2, 120, 3);
        let subset: Vec<usize> = (0..120).collect();
        let cfg = TreeEnsembleConfig {
            max_depth: 3,
            min_samples_leaf: 7,
            bootstrap: false,
            n_trees: 3,
            ..Default::default()
        };
        let e = fit_tree_ensemble(&cfg, &data, &subset).unwrap();
        for t in &e.trees {
            assert!(t.depth() <= 3);
            // each leaf reached by at least min_samples_leaf training rows
            let mut counts = vec![0usize; t.nodes.len()];
            for &i in &subset {
                let mut at = 0;
                while let TreeNode::Split { feature, threshold, left, right } = &t.nodes[at] {
                    at = if data.x(i)[*feature] <= *threshold { *left } else { *right };
                }
                counts[at] += 1;
            }
            for (i, n) in t.nodes.iter().enumerate() {
                if matches!(n, TreeNode::Leaf { .. }) {
                    assert!(counts[i] >= 7);
                }
            }
        }
    }

    #[test]
    fn identical_trees_average_to_one() {
        let data = random_regression(3, 50, 2);
        let subset: Vec<usize> = (0..50).collect();
        let one = TreeEnsembleConfig {
            n_trees: 1,
            bootstrap: false,
            ..Default::default()
        };
        let many = TreeEnsembleConfig { n_trees: 5, ..one };
        let a = values(fit_tree_ensemble(&one, &data, &subset).unwrap().predict(data.features()).unwrap());
        let b = values(fit_tree_ensemble(&many, &data, &subset).unwrap().predict(data.features()).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_probe_and_dimension_mismatch() {
        let data = random_regression(4, 20, 2);
        let e = fit_tree_ensemble(&TreeEnsembleConfig::default(), &data, &[0, 1, 2, 3, 4]).unwrap();
        assert!(e.predict(&DenseMatrix::zeros(0, 2)).unwrap().is_empty());
        assert!(e.predict(&DenseMatrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn boosted_training_rmse_non_increasing() {
        for seed in 0..10 {
            let data = random_regression(seed, 100, 3);
            let subset: Vec<usize> = (0..100).collect();
            let mut prev = f64::INFINITY;
            for n_trees in 1..=15 {
                let cfg = TreeEnsembleConfig {
                    mode: EnsembleMode::GradientBoosted,
                    n_trees,
                    max_features_fraction: 0.7,
                    max_depth: 3,
                    learning_rate: 0.3,
                    seed,
                    ..Default::default()
                };
                let e = fit_tree_ensemble(&cfg, &data, &subset).unwrap();
                let r = rmse(&values(e.predict(data.features()).unwrap()), data.targets());
                assert!(r <= prev + 1e-12, "seed {seed} trees {n_trees}: {r} > {prev}");
                prev = r;
            }
        }
    }

    #[test]
    fn forest_training_rmse_mostly_non_increasing_in_depth() {
        let mut monotone = 0;
        for seed in 0..50 {
            let data = random_regression(100 + seed, 60, 3);
            let subset: Vec<usize> = (0..60).collect();
            let mut prev = f64::INFINITY;
            let mut ok = true;
            for depth in 0..=6 {
                let cfg = TreeEnsembleConfig {
                    max_depth: depth,
                    n_trees: 5,
                    seed,
                    ..Default::default()
                };
                let e = fit_tree_ensemble(&cfg, &data, &subset).unwrap();
                let r = rmse(&values(e.predict(data.features()).unwrap()), data.targets());
                ok &= r <= prev + 1e-12;
                prev = r;
            }
            monotone += usize::from(ok);
        }
        assert!(monotone >= 45, "{monotone} of 50 monotone");
    }

    #[test]
    fn forest_classification_probabilities() {
        let rows = vec![vec![0.0], vec![0.2], vec![1.0], vec![1.2]];
        let data = Dataset::from_rows(&rows, vec![0.0, 0.0, 1.0, 1.0], Task::Classification { classes: 2 }).unwrap();
        let cfg = TreeEnsembleConfig {
            bootstrap: false,
            n_trees: 2,
            ..Default::default()
        };
        let e = fit_tree_ensemble(&cfg, &data, &[0, 1, 2, 3]).unwrap();
        let p = e.predict(data.features()).unwrap();
        assert_eq!(evaluate(&p, data.targets(), MetricKind::Accuracy).unwrap(), 1.0);
        assert!(evaluate(&p, data.targets(), MetricKind::Logloss).unwrap() < 1e-9);
        let boosted = TreeEnsembleConfig {
            mode: EnsembleMode::GradientBoosted,
            ..cfg
        };
        assert!(matches!(fit_tree_ensemble(&boosted, &data, &[0, 1, 2, 3]), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let bad = [
            TreeEnsembleConfig { n_trees: 0, ..Default::default() },
            TreeEnsembleConfig { min_samples_split: 1, ..Default::default() },
            TreeEnsembleConfig { min_samples_leaf: 0, ..Default::default() },
            TreeEnsembleConfig { max_features_fraction: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!("boosted".parse::<EnsembleMode>().is_err());
        assert_eq!("gradient_boosted".parse::<EnsembleMode>().unwrap(), EnsembleMode::GradientBoosted);
    }

    #[test]
    fn metric_examples() {
        let r = evaluate(&Predictions::Values(vec![1.0, 2.0]), &[1.0, 4.0], MetricKind::Rmse).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(evaluate(&Predictions::Values(vec![3.0, -1.0]), &[3.0, -1.0], MetricKind::Rmse).unwrap(), 0.0);
        let uniform = Predictions::Probabilities(vec![vec![0.5, 0.5]; 3]);
        let l = evaluate(&uniform, &[0.0, 1.0, 1.0], MetricKind::Logloss).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let half = Predictions::Values(vec![0.5, 0.5]);
        assert!((evaluate(&half, &[0.0, 1.0], MetricKind::Logloss).unwrap() - 2f64.ln()).abs() < 1e-12);
        let certain_wrong = Predictions::Probabilities(vec![vec![1.0, 0.0]]);
        let l = evaluate(&certain_wrong, &[1.0], MetricKind::Logloss).unwrap();
        assert!((l + PROB_CLIP.ln()).abs() < 1e-9);
        assert!(evaluate(&half, &[0.0], MetricKind::Rmse).is_err());
    }

    proptest! {
        #[test]
        fn rmse_permutation_invariant_and_scale_covariant(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30),
            alpha in 0.0f64..5.0,
            rot in 0usize..30,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let base = rmse(&p, &t);
            let k = rot % p.len();
            let (mut pr, mut tr) = (p.clone(), t.clone());
            pr.rotate_left(k);
            tr.rotate_left(k);
            prop_assert!((rmse(&pr, &tr) - base).abs() <= 1e-12 * (1.0 + base));
            let ps: Vec<f64> = p.iter().map(|v| alpha * v).collect();
            let ts: Vec<f64> = t.iter().map(|v| alpha * v).collect();
            prop_assert!((rmse(&ps, &ts) - alpha * base).abs() <= 1e-12 * (1.0 + alpha * base));
        }
    }
}
