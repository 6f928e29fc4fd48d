//! First-order influence of added training points on a fitted ERM model.
//!
//! With `H` the regularized training Hessian at `theta_hat` and `M` the size
//! of the fitted subset, adding points `z_1..z_m` moves the parameter to
//! approximately
//!
//! ```text
//! theta_tilde = theta_hat - 1/(M+m) * sum_j H^{-1} grad l(z_j, theta_hat)
//! ```
//!
//! which is exact for quadratic losses. Loss changes follow by the chain rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losskernels::{Datapoint, Dataset, FittedModel};
use crate::numkit::{axpy, dot};

const PAR_MIN_CANDIDATES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualScore {
    pub candidate_index: usize,
    pub score: f64,
}

/// `-H^{-1} grad l(z, theta_hat)`: the influence of an infinitesimal mass at `z`.
pub fn bif_single(model: &FittedModel, z: &Datapoint<'_>) -> Result<Vec<f64>> {
    let g = model.kernel.grad(z, &model.theta)?;
    let mut x = model.hinv().apply(&g)?;
    x.iter_mut().for_each(|v| *v = -*v);
    Ok(x)
}

fn summed_gradient(model: &FittedModel, points: &[Datapoint<'_>]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Contract("at least one new point is required".into()));
    }
    let mut acc = vec![0.0; model.kernel.dim()];
    for z in points {
        let g = model.kernel.grad(z, &model.theta)?;
        axpy(1.0, &g, &mut acc);
    }
    Ok(acc)
}

/// First-order estimate of the refit parameter after adding `new_points`.
pub fn first_order_update(model: &FittedModel, new_points: &[Datapoint<'_>]) -> Result<Vec<f64>> {
    let total = (model.subset_len() + new_points.len()) as f64;
    let step = model.hinv().apply(&summed_gradient(model, new_points)?)?;
    let mut theta = model.theta.clone();
    axpy(-1.0 / total, &step, &mut theta);
    Ok(theta)
}

/// First-order estimate of `l(probe, theta_new) - l(probe, theta_hat)`.
pub fn predict_loss_change(
    model: &FittedModel,
    probe: &Datapoint<'_>,
    new_points: &[Datapoint<'_>],
) -> Result<f64> {
    let total = (model.subset_len() + new_points.len()) as f64;
    let gp = model.kernel.grad(probe, &model.theta)?;
    let step = model.hinv().apply(&summed_gradient(model, new_points)?)?;
    Ok(-dot(&gp, &step) / total)
}

/// Mean gradient of the model's kernel over a whole validation set.
pub fn validation_gradient(model: &FittedModel, validation: &Dataset) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..validation.len()).collect();
    model.kernel.mean_grad(validation, &all, &model.theta)
}

/// Scores `score(i) = grad R(theta_hat)^T H^{-1} grad l(z_i, theta_hat)` for
/// candidates drawn from the model's own dataset, using one Hessian solve.
/// A larger score predicts a larger decrease of the objective `R`.
pub fn residual_scores_for_gradient(
    model: &FittedModel,
    objective_gradient: &[f64],
    candidates: &[usize],
) -> Result<Vec<ResidualScore>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= model.data.len()) {
        return Err(Error::Contract(format!("candidate index {bad} out of range")));
    }
    let adjoint = model.hinv().apply(objective_gradient)?;
    let score_one = |&i: &usize| {
        let mut g = vec![0.0; model.kernel.dim()];
        model.kernel.add_grad(&model.data.point(i), &model.theta, 1.0, &mut g);
        ResidualScore {
            candidate_index: i,
            score: dot(&adjoint, &g),
        }
    };
    let scores: Vec<ResidualScore> = if candidates.len() >= PAR_MIN_CANDIDATES {
        candidates.par_iter().map(score_one).collect()
    } else {
        candidates.iter().map(score_one).collect()
    };
    if scores.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NumericBreakdown("non-finite residual score".into()));
    }
    Ok(scores)
}

/// Residual scores with `R` the mean validation loss under the model's kernel.
pub fn residual_scores(
    model: &FittedModel,
    validation: &Dataset,
    candidates: &[usize],
) -> Result<Vec<ResidualScore>> {
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vg = validation_gradient(model, validation)?;
    residual_scores_for_gradient(model, &vg, candidates)
}

/// Indices of the `m` best scores, ties broken by lowest candidate index.
pub fn top_m(scores: &[ResidualScore], m: usize) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.candidate_index.cmp(&b.candidate_index))
    });
    sorted.into_iter().take(m).map(|s| s.candidate_index).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losskernels::{fit_erm, LossKernel, SolverSettings, Task};

    /// `l(z, theta) = 1/2 (theta - z)^2` via the squared kernel on a constant feature.
    fn mean_model(values: &[f64], subset: &[usize]) -> FittedModel {
        let rows: Vec<Vec<f64>> = values.iter().map(|_| vec![1.0]).collect();
        let ds = Dataset::from_rows(&rows, values.to_vec(), Task::Regression).unwrap();
        let k = LossKernel::squared(0.0, 1).unwrap();
        fit_erm(&k, &ds, subset, None, &SolverSettings::default()).unwrap()
    }

    fn one() -> [f64; 1] {
        [1.0]
    }

    #[test]
    fn bif_of_far_point() {
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 2, 3]);
        let x = one();
        let b = bif_single(&m, &Datapoint::new(&x, 10.0)).unwrap();
        assert!((b[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn bif_of_stationary_point_is_zero() {
        let m = mean_model(&[2.0, 4.0], &[0, 1]);
        let x = one();
        let b = bif_single(&m, &Datapoint::new(&x, 3.0)).unwrap();
        assert!(b[0].abs() < 1e-12);
    }

    #[test]
    fn first_order_update_mean_model() {
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 2, 3]);
        let x = one();
        let t = first_order_update(&m, &[Datapoint::new(&x, 10.0)]).unwrap();
        assert!((t[0] - 4.0).abs() < 1e-12);
        let t = first_order_update(&m, &[Datapoint::new(&x, 10.0), Datapoint::new(&x, 0.0)]).unwrap();
        assert!((t[0] - 20.0 / 6.0).abs() < 1e-12);
        let z = Datapoint::new(&x, 2.5);
        let t = first_order_update(&m, &[z, z, z]).unwrap();
        assert!((t[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_new_points_is_error() {
        let m = mean_model(&[1.0, 2.0], &[0, 1]);
        assert!(first_order_update(&m, &[]).is_err());
    }

    #[test]
    fn predicted_loss_change_mean_model() {
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 2, 3]);
        let x = one();
        let probe = Datapoint::new(&x, 0.0);
        let d = predict_loss_change(&m, &probe, &[Datapoint::new(&x, 10.0)]).unwrap();
        assert!((d - 3.75).abs() < 1e-12);
        let d = predict_loss_change(&m, &probe, &[Datapoint::new(&x, -2.0)]).unwrap();
        assert!((d + 2.25).abs() < 1e-12);
        let stationary = Datapoint::new(&x, 2.5);
        let d = predict_loss_change(&m, &stationary, &[Datapoint::new(&x, -7.0)]).unwrap();
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn residual_scores_mean_model() {
        // pool: subset {1,2,3,4} followed by candidates {-2,-1,0,1,2}
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0, -2.0, -1.0, 0.0, 1.0, 2.0], &[0, 1, 2, 3]);
        let val = Dataset::from_rows(&[vec![1.0]], vec![0.0], Task::Regression).unwrap();
        let s = residual_scores(&m, &val, &[4, 5, 6, 7, 8]).unwrap();
        let expect = [11.25, 8.75, 6.25, 3.75, 1.25];
        for (got, want) in s.iter().zip(expect) {
            assert!((got.score - want).abs() < 1e-12);
        }
        assert_eq!(top_m(&s, 2), vec![4, 5]);
    }

    #[test]
    fn residual_scores_zero_validation_gradient() {
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0, -2.0, 7.0], &[0, 1, 2, 3]);
        let val = Dataset::from_rows(&[vec![1.0]], vec![2.5], Task::Regression).unwrap();
        let s = residual_scores(&m, &val, &[4, 5]).unwrap();
        assert!(s.iter().all(|r| r.score == 0.0));
        assert!(residual_scores(&m, &val, &[]).unwrap().is_empty());
    }

    #[test]
    fn duplicate_candidates_score_identically() {
        let m = mean_model(&[1.0, 2.0, 3.0, 4.0, -2.0, -2.0], &[0, 1, 2, 3]);
        let val = Dataset::from_rows(&[vec![1.0]], vec![0.0], Task::Regression).unwrap();
        let s = residual_scores(&m, &val, &[4, 5, 4]).unwrap();
        assert_eq!(s[0].score, s[1].score);
        assert_eq!(s[0].score, s[2].score);
        assert_eq!(top_m(&s, 1), vec![4]);
    }
}
