//! Damped Newton solver for the subset-averaged regularized ERM objective.

use serde::{Deserialize, Serialize};

use super::{Dataset, LossKernel, DEFAULT_DENSE_THRESHOLD};
use crate::error::{Error, Result};
use crate::numkit::{cg_solve_with, dot, norm2, CgSettings, Cholesky, FnOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Required `||grad||_2` of the mean objective at the returned parameter.
    pub tol: f64,
    pub max_iter: usize,
    /// Parameter dimensions above this use CG-inexact Newton and CG Hessian solves.
    pub dense_threshold: usize,
    pub armijo_c: f64,
    /// Tolerance used when inverse-Hessian products go through CG.
    pub cg_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            armijo_c: 1e-4,
            cg_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum HessianSolver {
    Dense(Cholesky),
    Cg(CgSettings),
}

/// An ERM solution together with what is needed to apply `H^{-1}` at it.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kernel: LossKernel,
    pub theta: Vec<f64>,
    pub subset: Vec<usize>,
    pub data: Dataset,
    pub hessian_solver: HessianSolver,
    pub grad_norm_at_fit: f64,
    pub newton_iterations: usize,
}

impl FittedModel {
    pub fn subset_len(&self) -> usize {
        self.subset.len()
    }

    pub fn hinv(&self) -> HinvApplier<'_> {
        HinvApplier { model: self }
    }

    /// Mean regularized training loss at the fitted parameter.
    pub fn training_loss(&self) -> f64 {
        self.kernel.mean_loss_unchecked(&self.data, &self.subset, &self.theta)
    }
}

/// Applies the inverse of the training Hessian at `theta_hat`.
pub struct HinvApplier<'a> {
    model: &'a FittedModel,
}

impl HinvApplier<'_> {
    pub fn is_direct(&self) -> bool {
        matches!(self.model.hessian_solver, HessianSolver::Dense(_))
    }

    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = self.model;
        if b.len() != m.kernel.dim() {
            return Err(Error::DimensionMismatch {
                context: "HinvApplier::apply",
                expected: m.kernel.dim(),
                actual: b.len(),
            });
        }
        match &m.hessian_solver {
            HessianSolver::Dense(ch) => ch.solve(b),
            HessianSolver::Cg(settings) => {
                let op = FnOperator::new(m.kernel.dim(), |v: &[f64]| {
                    m.kernel.hess_vec_unchecked(&m.data, &m.subset, &m.theta, v)
                });
                let sol = cg_solve_with(&op, b, *settings)?;
                if !sol.converged && sol.residual_norm > 1e-6 * norm2(b) {
                    return Err(Error::NumericBreakdown(format!(
                        "CG inverse-Hessian solve stalled at residual {:e} after {} iterations",
                        sol.residual_norm, sol.iterations
                    )));
                }
                Ok(sol.x)
            }
        }
    }
}

/// Minimizes the mean of `kernel` over `data[subset]` by damped Newton with
/// Armijo backtracking. `init = None` is a cold start from zero.
pub fn fit_erm(
    kernel: &LossKernel,
    data: &Dataset,
    subset: &[usize],
    init: Option<&[f64]>,
    cfg: &SolverSettings,
) -> Result<FittedModel> {
    let dim = kernel.dim();
    let mut theta = match init {
        Some(t) => t.to_vec(),
        None => vec![0.0; dim],
    };
    kernel.check_subset(data, subset, &theta)?;
    {
        let mut seen = vec![false; data.len()];
        for &i in subset {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("subset index {i} repeated")));
            }
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        theta = vec![0.0; dim];
    }
    let dense = dim <= cfg.dense_threshold;

    let mut f = kernel.mean_loss_unchecked(data, subset, &theta);
    let mut g = kernel.mean_grad_unchecked(data, subset, &theta);
    let mut gn = norm2(&g);
    let mut iterations = 0;
    let mut stalls = 0;
    while gn > cfg.tol {
        if iterations >= cfg.max_iter || stalls > 5 {
            return Err(Error::Convergence {
                iterations,
                grad_norm: gn,
            });
        }
        iterations += 1;
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = if dense {
            let h = kernel.full_hessian_unchecked(data, subset, &theta);
            Cholesky::factor(&h)?.solve(&neg_g)?
        } else {
            let op = FnOperator::new(dim, |v: &[f64]| kernel.hess_vec_unchecked(data, subset, &theta, v));
            let forcing = gn.sqrt().min(0.5);
            cg_solve_with(
                &op,
                &neg_g,
                CgSettings {
                    tol: forcing,
                    max_iter: None,
                },
            )?
            .x
        };
        let slope = dot(&g, &step);
        if !(slope < 0.0) {
            return Err(Error::NumericBreakdown(format!(
                "Newton direction is not a descent direction (slope {slope:e})"
            )));
        }
        let mut t = 1.0;
        let mut accepted = None;
        if -slope <= 1e-10 * (1.0 + f.abs()) {
            // Newton decrement below what loss values can resolve: the full
            // step is inside the quadratic-convergence region
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + s).collect();
            let fc = kernel.mean_loss_unchecked(data, subset, &cand);
            accepted = Some((cand, fc));
            t = 0.0;
        }
        while accepted.is_none() && t >= 1e-10 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = kernel.mean_loss_unchecked(data, subset, &cand);
            if fc.is_finite() && fc <= f + cfg.armijo_c * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let (next, fnext) = match accepted {
            Some(p) => {
                stalls = 0;
                p
            }
            None => {
                // decrease invisible at rounding level: take the full step and
                // let the gradient test decide
                stalls += 1;
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + s).collect();
                let fc = kernel.mean_loss_unchecked(data, subset, &cand);
                (cand, fc)
            }
        };
        theta = next;
        f = fnext;
        g = kernel.mean_grad_unchecked(data, subset, &theta);
        gn = norm2(&g);
        if !gn.is_finite() {
            return Err(Error::NumericBreakdown("non-finite gradient during Newton".into()));
        }
    }

    let hessian_solver = if dense {
        HessianSolver::Dense(Cholesky::factor(&kernel.full_hessian_unchecked(data, subset, &theta))?)
    } else {
        HessianSolver::Cg(CgSettings {
            tol: cfg.cg_tol,
            max_iter: None,
        })
    };
    Ok(FittedModel {
        kernel: *kernel,
        theta,
        subset: subset.to_vec(),
        data: data.clone(),
        hessian_solver,
        grad_norm_at_fit: gn,
        newton_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losskernels::Task;
    use crate::numkit::{norm_inf, sub};
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mean_model(values: &[f64]) -> (LossKernel, Dataset) {
        let rows: Vec<Vec<f64>> = values.iter().map(|_| vec![1.0]).collect();
        (
            LossKernel::squared(0.0, 1).unwrap(),
            Dataset::from_rows(&rows, values.to_vec(), Task::Regression).unwrap(),
        )
    }

    #[test]
    fn mean_of_targets() {
        let (k, ds) = mean_model(&[2.0, 4.0]);
        let m = fit_erm(&k, &ds, &[0, 1], None, &SolverSettings::default()).unwrap();
        assert!((m.theta[0] - 3.0).abs() < 1e-12);
        let (k, ds) = mean_model(&[1.0, 2.0, 3.0, 4.0]);
        let m = fit_erm(&k, &ds, &[0, 1, 2, 3], None, &SolverSettings::default()).unwrap();
        assert!((m.theta[0] - 2.5).abs() < 1e-12);
        assert!(m.grad_norm_at_fit <= 1e-9);
    }

    #[test]
    fn symmetric_logistic_is_zero() {
        let k = LossKernel::logistic(1.0, 1).unwrap();
        let ds = Dataset::from_rows(
            &[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]],
            vec![1.0, 0.0, 0.0, 1.0],
            Task::Classification { classes: 2 },
        )
        .unwrap();
        let m = fit_erm(&k, &ds, &[0, 1, 2, 3], Some(&[0.7]), &SolverSettings::default()).unwrap();
        assert!(m.theta[0].abs() < 1e-10);
    }

    #[test]
    fn rejects_empty_and_repeated_subsets() {
        let (k, ds) = mean_model(&[1.0, 2.0]);
        assert!(fit_erm(&k, &ds, &[], None, &SolverSettings::default()).is_err());
        assert!(fit_erm(&k, &ds, &[0, 0], None, &SolverSettings::default()).is_err());
    }

    #[test]
    fn reports_nonconvergence() {
        let k = LossKernel::logistic(1e-4, 2).unwrap();
        let ds = Dataset::from_rows(
            &[vec![3.0, 1.0], vec![-2.0, 1.0], vec![1.0, -1.0]],
            vec![1.0, 0.0, 1.0],
            Task::Classification { classes: 2 },
        )
        .unwrap();
        let cfg = SolverSettings {
            max_iter: 1,
            ..Default::default()
        };
        match fit_erm(&k, &ds, &[0, 1, 2], None, &cfg) {
            Err(Error::Convergence { iterations, grad_norm }) => {
                assert_eq!(iterations, 1);
                assert!(grad_norm > cfg.tol);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    fn random_logistic(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        Dataset::from_rows(&rows, ys, Task::Classification { classes: 2 }).unwrap()
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_logistic(&mut rng, 40, 3);
        let k = LossKernel::logistic(1e-2, 3).unwrap();
        let mut subset: Vec<usize> = (0..40).collect();
        let a = fit_erm(&k, &ds, &subset, None, &SolverSettings::default()).unwrap();
        subset.shuffle(&mut rng);
        let b = fit_erm(&k, &ds, &subset, None, &SolverSettings::default()).unwrap();
        assert!(norm_inf(&sub(&a.theta, &b.theta)) <= 1e-10);
    }

    #[test]
    fn objective_not_worse_than_init_or_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind_i in 0..3 {
            let ds = match kind_i {
                0 => random_logistic(&mut rng, 30, 3),
                1 => {
                    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                    let ys = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
                    Dataset::from_rows(&rows, ys, Task::Regression).unwrap()
                }
                _ => {
                    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                    let ys = (0..30).map(|_| rng.random_range(0..3) as f64).collect();
                    Dataset::from_rows(&rows, ys, Task::Classification { classes: 3 }).unwrap()
                }
            };
            let k = LossKernel::for_task(ds.task(), 1e-2, 3).unwrap();
            let subset: Vec<usize> = (0..30).collect();
            let init: Vec<f64> = (0..k.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = fit_erm(&k, &ds, &subset, Some(&init), &SolverSettings::default()).unwrap();
            let f = k.mean_loss(&ds, &subset, &m.theta).unwrap();
            assert!(f <= k.mean_loss(&ds, &subset, &init).unwrap());
            for _ in 0..10 {
                let p: Vec<f64> = m.theta.iter().map(|t| t + rng.random_range(-0.1..0.1)).collect();
                assert!(f <= k.mean_loss(&ds, &subset, &p).unwrap());
            }
        }
    }

    #[test]
    fn cg_path_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..50).map(|_| rng.random_range(0..3) as f64).collect();
        let ds = Dataset::from_rows(&rows, ys, Task::Classification { classes: 3 }).unwrap();
        let k = LossKernel::softmax(1e-2, 4, 3).unwrap();
        let subset: Vec<usize> = (0..50).collect();
        let dense = fit_erm(&k, &ds, &subset, None, &SolverSettings::default()).unwrap();
        let cg_cfg = SolverSettings {
            dense_threshold: 0,
            cg_tol: 1e-12,
            ..Default::default()
        };
        let cg = fit_erm(&k, &ds, &subset, None, &cg_cfg).unwrap();
        assert!(matches!(cg.hessian_solver, HessianSolver::Cg(_)));
        assert!(norm_inf(&sub(&dense.theta, &cg.theta)) < 1e-8);
        let b: Vec<f64> = (0..k.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x1 = dense.hinv().apply(&b).unwrap();
        let x2 = cg.hinv().apply(&b).unwrap();
        assert!(norm_inf(&sub(&x1, &x2)) < 1e-6);
        // residual check against hess_vec
        let hx = k.hess_vec(&ds, &subset, &cg.theta, &x2).unwrap();
        assert!(norm2(&sub(&hx, &b)) <= 1e-6 * norm2(&b));
    }
}
