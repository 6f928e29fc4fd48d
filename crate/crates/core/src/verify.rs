//! Numerical property experiments shared by the `verify` command and the
//! acceptance tests. Each returns a [`PropertyReport`] with the measured
//! statistics and a pass flag.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{bif_single, first_order_update, predict_loss_change, residual_scores, top_m};
use crate::losskernels::{fit_erm, Datapoint, Dataset, LossKernel, SolverSettings, Task};
use crate::numkit::{cg_solve, cholesky_solve, dot, norm2, norm_inf, sub, DenseMatrix};
use crate::selector::{compute_deltas, SelectionConfig, ValidationLoss};

pub const PROPERTY_NAMES: [&str; 9] = [
    "lemma1_error_slope",
    "quadratic_exactness",
    "batch_additivity",
    "chain_rule_consistency",
    "adjoint_scores",
    "oracle_agreement",
    "delta_ordering",
    "gradient_checks",
    "cg_vs_cholesky",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    pub quick: bool,
    pub statistics: BTreeMap<String, f64>,
    pub detail: String,
}

impl PropertyReport {
    fn new(name: &str, passed: bool, statistics: BTreeMap<String, f64>, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            quick: false,
            statistics,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub quick: bool,
    pub seed: u64,
}

fn stats<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn instance_rng(seed: u64, instance: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(instance as u64))
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn gauss_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
    DenseMatrix::from_row_major(n, d, gauss_vec(rng, n * d)).expect("finite gaussian draws")
}

/// Linear-Gaussian regression rows `y = x^T beta + noise`.
fn regression_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let beta = gauss_vec(rng, d);
    let x = gauss_matrix(rng, n, d);
    let y = (0..n).map(|i| dot(x.row(i), &beta) + 0.5 * gauss(rng)).collect();
    Dataset::new(x, y, Task::Regression).expect("valid regression data")
}

/// Binary labels drawn from a logistic model with coefficients `beta`.
fn logistic_data(rng: &mut ChaCha8Rng, n: usize, beta: &[f64]) -> Dataset {
    let d = beta.len();
    let x = gauss_matrix(rng, n, d);
    let y = (0..n)
        .map(|i| {
            let p = 1.0 / (1.0 + (-dot(x.row(i), beta)).exp());
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Dataset::new(x, y, Task::Classification { classes: 2 }).expect("valid labels")
}

fn multiclass_data(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Dataset {
    let x = gauss_matrix(rng, n, d);
    let y = (0..n).map(|_| rng.random_range(0..k) as f64).collect();
    Dataset::new(x, y, Task::Classification { classes: k }).expect("valid labels")
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Runs one named property.
pub fn run_property(name: &str, opts: &VerifyOptions) -> Result<PropertyReport> {
    let q = opts.quick;
    let n = |full: usize, quick: usize| if q { quick } else { full };
    let mut report = match name {
        "lemma1_error_slope" => first_order_error_slope(n(50, 20), opts.seed)?,
        "quadratic_exactness" => quadratic_exactness(n(100, 20), opts.seed)?,
        "batch_additivity" => batch_additivity(n(100, 20), opts.seed)?,
        "chain_rule_consistency" => chain_rule_consistency(n(100, 20), opts.seed)?,
        "adjoint_scores" => adjoint_scores(n(50, 10), opts.seed)?,
        "oracle_agreement" => oracle_agreement(n(100, 20), opts.seed)?,
        "delta_ordering" => delta_ordering(n(100, 20), opts.seed)?,
        "gradient_checks" => gradient_checks(n(100, 20), opts.seed)?,
        "cg_vs_cholesky" => cg_vs_cholesky(n(100, 20), opts.seed)?,
        other => return Err(Error::Config(format!("unknown property '{other}'"))),
    };
    report.quick = q;
    Ok(report)
}

/// Runs the named properties (all of them when `only` is empty) in the
/// canonical order.
pub fn run_properties(only: &[String], opts: &VerifyOptions) -> Result<Vec<PropertyReport>> {
    for o in only {
        if !PROPERTY_NAMES.contains(&o.as_str()) {
            return Err(Error::Config(format!(
                "unknown property '{o}'; expected one of {}",
                PROPERTY_NAMES.join(", ")
            )));
        }
    }
    PROPERTY_NAMES
        .iter()
        .filter(|p| only.is_empty() || only.iter().any(|o| o == *p))
        .map(|p| run_property(p, opts))
        .collect()
}

fn quadratic_error(seed: u64, instance: usize, constant_design: bool) -> Result<f64> {
    let mut rng = instance_rng(seed, instance);
    let big_m = rng.random_range(10..=200);
    let m = rng.random_range(1..=10);
    let (kernel, data) = if constant_design {
        let c = rng.random_range(0.5..2.0);
        let mu = 3.0 * gauss(&mut rng);
        let x = DenseMatrix::from_row_major(big_m + m, 1, vec![c; big_m + m])?;
        let y = (0..big_m + m).map(|_| mu + 2.0 * gauss(&mut rng)).collect();
        (LossKernel::squared(0.0, 1)?, Dataset::new(x, y, Task::Regression)?)
    } else {
        let d = rng.random_range(1..=8);
        (LossKernel::squared(0.0, d)?, regression_data(&mut rng, big_m + m, d))
    };
    let cfg = SolverSettings::default();
    let model = fit_erm(&kernel, &data, &all(big_m), None, &cfg)?;
    let added: Vec<Datapoint<'_>> = (big_m..big_m + m).map(|j| data.point(j)).collect();
    let approx = first_order_update(&model, &added)?;
    let exact = fit_erm(&kernel, &data, &all(big_m + m), None, &cfg)?;
    Ok(norm_inf(&sub(&approx, &exact.theta)))
}

/// For a quadratic loss whose per-point Hessian is the same for every point
/// (squared kernel, no regularization, constant design) the first-order
/// update equals the exact refit. The error on random Gaussian designs,
/// where per-point Hessians differ, is reported alongside.
pub fn quadratic_exactness(instances: usize, seed: u64) -> Result<PropertyReport> {
    let max_err = |constant: bool| -> Result<f64> {
        let errs: Vec<f64> = (0..instances)
            .into_par_iter()
            .map(|i| quadratic_error(seed, i, constant))
            .collect::<Result<_>>()?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    };
    let worst = max_err(true)?;
    let general = max_err(false)?;
    Ok(PropertyReport::new(
        "quadratic_exactness",
        worst <= 1e-9,
        stats([
            ("instances", instances as f64),
            ("max_abs_error", worst),
            ("tolerance", 1e-9),
            ("gaussian_design_max_abs_error", general),
        ]),
        format!("max |theta_tilde - theta_refit| = {worst:.3e}"),
    ))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub const ERROR_SLOPE_SIZES: [usize; 4] = [50, 100, 200, 400];

/// Single-point first-order error against the exact refit for binary
/// logistic regression, averaged over `points` added points, at growing
/// training sizes; reports the log-log slope.
pub fn first_order_error_slope(points: usize, seed: u64) -> Result<PropertyReport> {
    let d = 3;
    let mut rng = instance_rng(seed, 0);
    let beta = vec![1.0, -0.5, 0.25];
    let max_m = *ERROR_SLOPE_SIZES.last().unwrap();
    let data = logistic_data(&mut rng, max_m + points, &beta);
    let kernel = LossKernel::logistic(crate::losskernels::DEFAULT_LAMBDA, d)?;
    let cfg = SolverSettings {
        tol: 1e-12,
        ..Default::default()
    };
    let mut errors = Vec::new();
    for &big_m in &ERROR_SLOPE_SIZES {
        let base = all(big_m);
        let model = fit_erm(&kernel, &data, &base, None, &cfg)?;
        let errs: Vec<f64> = (0..points)
            .into_par_iter()
            .map(|j| {
                let z = max_m + j;
                let approx = first_order_update(&model, &[data.point(z)])?;
                let mut s = base.clone();
                s.push(z);
                let exact = fit_erm(&kernel, &data, &s, Some(&model.theta), &cfg)?;
                Ok(norm2(&sub(&approx, &exact.theta)))
            })
            .collect::<Result<_>>()?;
        errors.push(errs.iter().sum::<f64>() / points as f64);
    }
    let lx: Vec<f64> = ERROR_SLOPE_SIZES.iter().map(|&m| (m as f64).ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    let mut st = stats([("slope", slope), ("threshold", -1.6), ("points", points as f64)]);
    for (m, e) in ERROR_SLOPE_SIZES.iter().zip(&errors) {
        st.insert(format!("mean_error_m{m}"), *e);
    }
    Ok(PropertyReport::new(
        "lemma1_error_slope",
        slope <= -1.6,
        st,
        format!("log-log slope {slope:.3}"),
    ))
}

/// `(M + m)(theta_tilde - theta_hat)` equals the sum of single-point influences.
pub fn batch_additivity(instances: usize, seed: u64) -> Result<PropertyReport> {
    let errors: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let d = rng.random_range(1..=6);
            let big_m = rng.random_range(20..=120);
            let m = rng.random_range(2..=10);
            let beta = gauss_vec(&mut rng, d);
            let data = logistic_data(&mut rng, big_m + m, &beta);
            let kernel = LossKernel::logistic(crate::losskernels::DEFAULT_LAMBDA, d)?;
            let model = fit_erm(&kernel, &data, &all(big_m), None, &SolverSettings::default())?;
            let added: Vec<Datapoint<'_>> = (big_m..big_m + m).map(|j| data.point(j)).collect();
            let approx = first_order_update(&model, &added)?;
            let lhs: Vec<f64> = approx
                .iter()
                .zip(&model.theta)
                .map(|(a, t)| (big_m + m) as f64 * (a - t))
                .collect();
            let mut rhs = vec![0.0; d];
            for z in &added {
                let b = bif_single(&model, z)?;
                rhs.iter_mut().zip(&b).for_each(|(r, v)| *r += v);
            }
            Ok(norm_inf(&sub(&lhs, &rhs)) / norm_inf(&rhs).max(1.0))
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Ok(PropertyReport::new(
        "batch_additivity",
        worst <= 1e-10,
        stats([("instances", instances as f64), ("max_scaled_error", worst), ("tolerance", 1e-10)]),
        format!("max scaled deviation {worst:.3e}"),
    ))
}

/// Single-point predicted loss change equals the probe gradient dotted with
/// the first-order parameter step.
pub fn chain_rule_consistency(instances: usize, seed: u64) -> Result<PropertyReport> {
    let errors: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let d = rng.random_range(1..=6);
            let big_m = rng.random_range(20..=120);
            let beta = gauss_vec(&mut rng, d);
            let data = logistic_data(&mut rng, big_m + 2, &beta);
            let kernel = LossKernel::logistic(crate::losskernels::DEFAULT_LAMBDA, d)?;
            let model = fit_erm(&kernel, &data, &all(big_m), None, &SolverSettings::default())?;
            let z = data.point(big_m);
            let probe = data.point(big_m + 1);
            let predicted = predict_loss_change(&model, &probe, &[z])?;
            let step = sub(&first_order_update(&model, &[z])?, &model.theta);
            let chain = dot(&kernel.grad(&probe, &model.theta)?, &step);
            Ok((predicted - chain).abs() / predicted.abs().max(1.0))
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Ok(PropertyReport::new(
        "chain_rule_consistency",
        worst <= 1e-12,
        stats([("instances", instances as f64), ("max_scaled_error", worst), ("tolerance", 1e-12)]),
        format!("max deviation {worst:.3e}"),
    ))
}

/// Adjoint-ordered residual scores against one solve per candidate.
pub fn adjoint_scores(instances: usize, seed: u64) -> Result<PropertyReport> {
    let errors: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let d = rng.random_range(2..=20);
            let big_m = 3 * d + rng.random_range(10..=60);
            let n_cand = 15;
            let data = if i % 2 == 0 {
                regression_data(&mut rng, big_m + n_cand, d)
            } else {
                let beta = gauss_vec(&mut rng, d);
                logistic_data(&mut rng, big_m + n_cand, &beta)
            };
            let validation = if i % 2 == 0 {
                regression_data(&mut rng, 20, d)
            } else {
                let beta = gauss_vec(&mut rng, d);
                logistic_data(&mut rng, 20, &beta)
            };
            let kernel = LossKernel::for_task(data.task(), crate::losskernels::DEFAULT_LAMBDA, d)?;
            let model = fit_erm(&kernel, &data, &all(big_m), None, &SolverSettings::default())?;
            let candidates: Vec<usize> = (big_m..big_m + n_cand).collect();
            let fast = residual_scores(&model, &validation, &candidates)?;
            let vg = kernel.mean_grad(&validation, &all(validation.len()), &model.theta)?;
            let mut worst: f64 = 0.0;
            for s in &fast {
                let g = kernel.grad(&data.point(s.candidate_index), &model.theta)?;
                let naive = dot(&vg, &model.hinv().apply(&g)?);
                worst = worst.max((naive - s.score).abs() / naive.abs().max(1.0));
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Ok(PropertyReport::new(
        "adjoint_scores",
        worst <= 1e-8,
        stats([("instances", instances as f64), ("max_scaled_error", worst), ("tolerance", 1e-8)]),
        format!("max deviation {worst:.3e}"),
    ))
}

pub const ORACLE_VALIDATION_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOutcome {
    /// Position of the influence-greedy choice in the exact ranking (0 = best).
    pub rank: usize,
    /// `(R(greedy) - R(best)) / (R(worst) - R(best))`.
    pub normalized_regret: f64,
}

/// One instance of the greedy-vs-oracle comparison on a logistic model
/// (d = 5, M = 60, 30 candidates, m = 1).
pub fn oracle_rank(seed: u64, instance: usize) -> Result<OracleOutcome> {
    let (d, big_m, pool, n_val) = (5, 60, 30, ORACLE_VALIDATION_SIZE);
    let mut rng = instance_rng(seed, instance);
    let beta = gauss_vec(&mut rng, d);
    let data = logistic_data(&mut rng, big_m + pool, &beta);
    let validation = logistic_data(&mut rng, n_val, &beta);
    let kernel = LossKernel::logistic(crate::losskernels::DEFAULT_LAMBDA, d)?;
    let cfg = SolverSettings::default();
    let model = fit_erm(&kernel, &data, &all(big_m), None, &cfg)?;
    let candidates: Vec<usize> = (big_m..big_m + pool).collect();
    let greedy = top_m(&residual_scores(&model, &validation, &candidates)?, 1)[0];
    let objective = ValidationLoss::new(kernel, validation)?;
    let mut values = Vec::with_capacity(pool);
    for &c in &candidates {
        let mut s = all(big_m);
        s.push(c);
        let refit = fit_erm(&kernel, &data, &s, Some(&model.theta), &cfg)?;
        values.push((c, crate::selector::Objective::value_of(&objective, &refit)));
    }
    values.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let rank = values.iter().position(|&(c, _)| c == greedy).expect("greedy choice is a candidate");
    let (best, worst) = (values[0].1, values[pool - 1].1);
    let span = worst - best;
    Ok(OracleOutcome {
        rank,
        normalized_regret: if span > 0.0 { (values[rank].1 - best) / span } else { 0.0 },
    })
}

/// Agreement of the single-pass influence choice with exhaustive retraining.
pub fn oracle_agreement(instances: usize, seed: u64) -> Result<PropertyReport> {
    let outcomes: Vec<OracleOutcome> = (0..instances)
        .into_par_iter()
        .map(|i| oracle_rank(seed, i))
        .collect::<Result<_>>()?;
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
    let n = instances as f64;
    let regret = outcomes.iter().map(|o| o.normalized_regret).sum::<f64>() / n;
    let top1 = ranks.iter().filter(|&&r| r == 0).count() as f64 / n;
    let top3 = ranks.iter().filter(|&&r| r < 3).count() as f64 / n;
    Ok(PropertyReport::new(
        "oracle_agreement",
        top1 >= 0.90 && top3 >= 0.99,
        stats([
            ("instances", n),
            ("top1_agreement", top1),
            ("top3_agreement", top3),
            ("top1_threshold", 0.90),
            ("top3_threshold", 0.99),
            ("mean_normalized_regret", regret),
        ]),
        format!("top-1 {:.1}%, top-3 {:.1}%", 100.0 * top1, 100.0 * top3),
    ))
}

/// `delta'' <= delta' <= 0` by exact retraining on small instances of every kernel.
pub fn delta_ordering(instances: usize, seed: u64) -> Result<PropertyReport> {
    let outcomes: Vec<(bool, f64, f64)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let d = rng.random_range(1..=4);
            let big_m = rng.random_range(10..=30);
            let pool = 8;
            let m = 1 + i % 2;
            let (data, validation) = match i % 3 {
                0 => (regression_data(&mut rng, big_m + pool, d), regression_data(&mut rng, 15, d)),
                1 => {
                    let beta = gauss_vec(&mut rng, d);
                    (logistic_data(&mut rng, big_m + pool, &beta), logistic_data(&mut rng, 15, &beta))
                }
                _ => (multiclass_data(&mut rng, big_m + pool, d, 3), multiclass_data(&mut rng, 15, d, 3)),
            };
            let kernel = LossKernel::for_task(data.task(), crate::losskernels::DEFAULT_LAMBDA, d)?;
            let objective = ValidationLoss::new(kernel, validation)?;
            let cfg = SelectionConfig {
                record_wall_time: false,
                ..Default::default()
            };
            let r = compute_deltas(&kernel, &data, &all(big_m), &objective, m, seed, &cfg)?;
            let ok = r.delta_double_prime <= r.delta_prime && r.delta_prime <= 0.0;
            Ok((ok, r.delta_prime, r.delta_double_prime))
        })
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|o| !o.0).count();
    let max_dp = outcomes.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    let mean_gap = outcomes.iter().map(|o| o.1 - o.2).sum::<f64>() / instances as f64;
    Ok(PropertyReport::new(
        "delta_ordering",
        violations == 0,
        stats([
            ("instances", instances as f64),
            ("violations", violations as f64),
            ("max_delta_prime", max_dp),
            ("mean_delta_prime_minus_double_prime", mean_gap),
        ]),
        format!("{violations} ordering violations"),
    ))
}

/// Central finite-difference checks of gradients and Hessian-vector products
/// for every kernel.
pub fn gradient_checks(draws: usize, seed: u64) -> Result<PropertyReport> {
    let kernels = [
        LossKernel::squared(0.3, 4)?,
        LossKernel::logistic(0.3, 4)?,
        LossKernel::softmax(0.3, 4, 3)?,
    ];
    let mut st = BTreeMap::new();
    let mut passed = true;
    for (ki, kernel) in kernels.iter().enumerate() {
        let mut rng = instance_rng(seed, 1000 + ki);
        let d = kernel.features;
        let mut worst_grad: f64 = 0.0;
        let mut worst_hess: f64 = 0.0;
        for _ in 0..draws {
            let x = gauss_vec(&mut rng, d);
            let y = match kernel.kind {
                crate::losskernels::LossKind::Squared => gauss(&mut rng),
                crate::losskernels::LossKind::Logistic => rng.random_range(0..2) as f64,
                crate::losskernels::LossKind::Softmax { classes } => rng.random_range(0..classes) as f64,
            };
            let z = Datapoint::new(&x, y);
            let theta = gauss_vec(&mut rng, kernel.dim());
            let g = kernel.grad(&z, &theta)?;
            let fd: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let h = 1e-5 * (1.0 + theta[i].abs());
                    let mut tp = theta.clone();
                    let mut tm = theta.clone();
                    tp[i] += h;
                    tm[i] -= h;
                    Ok((kernel.loss(&z, &tp)? - kernel.loss(&z, &tm)?) / (2.0 * h))
                })
                .collect::<Result<_>>()?;
            worst_grad = worst_grad.max(norm2(&sub(&g, &fd)) / norm2(&g).max(1e-3));

            let n = 5;
            let data = if kernel.label() == "squared" {
                regression_data(&mut rng, n, d)
            } else {
                let k = match kernel.kind {
                    crate::losskernels::LossKind::Softmax { classes } => classes,
                    _ => 2,
                };
                multiclass_data(&mut rng, n, d, k)
            };
            let v = gauss_vec(&mut rng, kernel.dim());
            let hv = kernel.hess_vec(&data, &all(n), &theta, &v)?;
            let h = 1e-5;
            let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + h * vi).collect();
            let tm: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t - h * vi).collect();
            let gp = kernel.mean_grad(&data, &all(n), &tp)?;
            let gm = kernel.mean_grad(&data, &all(n), &tm)?;
            let fd_hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            worst_hess = worst_hess.max(norm2(&sub(&hv, &fd_hv)) / norm2(&v));
        }
        passed &= worst_grad <= 1e-5 && worst_hess <= 1e-4;
        st.insert(format!("{}_grad_rel_error", kernel.label()), worst_grad);
        st.insert(format!("{}_hess_vec_error", kernel.label()), worst_hess);
    }
    st.insert("draws".into(), draws as f64);
    Ok(PropertyReport::new(
        "gradient_checks",
        passed,
        st,
        "gradient tolerance 1e-5 relative, Hessian-vector tolerance 1e-4".into(),
    ))
}

/// CG against Cholesky on random SPD systems `M^T M + I` of dimension up to 50.
pub fn cg_vs_cholesky(instances: usize, seed: u64) -> Result<PropertyReport> {
    let errors: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 5000 + i);
            let n = rng.random_range(1..=50);
            let m = gauss_matrix(&mut rng, n, n);
            let mut a = m.transpose().matmul(&m)?;
            for j in 0..n {
                a.add_at(j, j, 1.0);
            }
            a.symmetrize_from_upper();
            let b = gauss_vec(&mut rng, n);
            let direct = cholesky_solve(&a, &b)?;
            let cg = cg_solve(&a, &b, 1e-12, 20 * n)?;
            Ok(norm_inf(&sub(&direct, &cg.x)))
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    Ok(PropertyReport::new(
        "cg_vs_cholesky",
        worst <= 1e-6,
        stats([("instances", instances as f64), ("max_abs_difference", worst), ("tolerance", 1e-6)]),
        format!("max |x_cg - x_chol| = {worst:.3e}"),
    ))
}
