use infsel::influence::{bif_single, first_order_update, predict_loss_change, residual_scores, top_m};
use infsel::losskernels::{fit_erm, Dataset, LossKernel, SolverSettings, Task, DEFAULT_LAMBDA};
use infsel::numkit::{dot, norm_inf, sub, DenseMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn logistic_pool(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = gaussian(&mut rng, d);
    let x = DenseMatrix::from_row_major(n, d, gaussian(&mut rng, n * d)).unwrap();
    let y = (0..n)
        .map(|i| {
            let p = 1.0 / (1.0 + (-dot(x.row(i), &beta)).exp());
            f64::from(rng.random::<f64>() < p)
        })
        .collect();
    Dataset::new(x, y, Task::Classification { classes: 2 }).unwrap()
}

fn regression_pool(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = gaussian(&mut rng, d);
    let x = DenseMatrix::from_row_major(n, d, gaussian(&mut rng, n * d)).unwrap();
    let y = (0..n).map(|i| dot(x.row(i), &beta) + gaussian(&mut rng, 1)[0]).collect();
    Dataset::new(x, y, Task::Regression).unwrap()
}

fn range(a: usize, b: usize) -> Vec<usize> {
    (a..b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn batch_update_is_sum_of_single_influences(seed in any::<u64>(), d in 1usize..6, big_m in 20usize..120, m in 1usize..10) {
        let data = logistic_pool(seed, big_m + m, d);
        let k = LossKernel::logistic(DEFAULT_LAMBDA, d).unwrap();
        let model = fit_erm(&k, &data, &range(0, big_m), None, &SolverSettings::default()).unwrap();
        let pts: Vec<_> = (big_m..big_m + m).map(|i| data.point(i)).collect();
        let upd = first_order_update(&model, &pts).unwrap();
        let lhs: Vec<f64> = upd.iter().zip(&model.theta).map(|(a, t)| (big_m + m) as f64 * (a - t)).collect();
        let mut rhs = vec![0.0; d];
        for z in &pts {
            for (r, b) in rhs.iter_mut().zip(bif_single(&model, z).unwrap()) {
                *r += b;
            }
        }
        prop_assert!(norm_inf(&sub(&lhs, &rhs)) <= 1e-10 * norm_inf(&rhs).max(1.0));
    }

    #[test]
    fn constant_design_update_is_exact(seed in any::<u64>(), big_m in 10usize..200, m in 1usize..10, c in 0.5f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = big_m + m;
        let x = DenseMatrix::from_row_major(n, 1, vec![c; n]).unwrap();
        let y: Vec<f64> = gaussian(&mut rng, n).iter().map(|v| 5.0 * v).collect();
        let data = Dataset::new(x, y.clone(), Task::Regression).unwrap();
        let k = LossKernel::squared(0.0, 1).unwrap();
        let cfg = SolverSettings::default();
        let model = fit_erm(&k, &data, &range(0, big_m), None, &cfg).unwrap();
        let pts: Vec<_> = (big_m..n).map(|i| data.point(i)).collect();
        let upd = first_order_update(&model, &pts).unwrap();
        // closed form: least squares on a constant design is mean(y) / c
        let exact = y.iter().sum::<f64>() / n as f64 / c;
        prop_assert!((upd[0] - exact).abs() <= 1e-9);
    }

    #[test]
    fn loss_change_follows_chain_rule(seed in any::<u64>(), d in 1usize..6, big_m in 20usize..100) {
        let data = logistic_pool(seed, big_m + 2, d);
        let k = LossKernel::logistic(DEFAULT_LAMBDA, d).unwrap();
        let model = fit_erm(&k, &data, &range(0, big_m), None, &SolverSettings::default()).unwrap();
        let (z, probe) = (data.point(big_m), data.point(big_m + 1));
        let predicted = predict_loss_change(&model, &probe, &[z]).unwrap();
        let step = sub(&first_order_update(&model, &[z]).unwrap(), &model.theta);
        let chain = dot(&k.grad(&probe, &model.theta).unwrap(), &step);
        prop_assert!((predicted - chain).abs() <= 1e-12 * predicted.abs().max(1.0));
    }

    #[test]
    fn adjoint_scores_match_per_candidate_solves(seed in any::<u64>(), d in 2usize..20, logistic in any::<bool>()) {
        let big_m = 3 * d + 20;
        let n = big_m + 12;
        let (data, val) = if logistic {
            (logistic_pool(seed, n, d), logistic_pool(seed ^ 1, 25, d))
        } else {
            (regression_pool(seed, n, d), regression_pool(seed ^ 1, 25, d))
        };
        let k = LossKernel::for_task(data.task(), DEFAULT_LAMBDA, d).unwrap();
        let model = fit_erm(&k, &data, &range(0, big_m), None, &SolverSettings::default()).unwrap();
        let cands = range(big_m, n);
        let scores = residual_scores(&model, &val, &cands).unwrap();
        let vg = k.mean_grad(&val, &range(0, val.len()), &model.theta).unwrap();
        for s in &scores {
            let g = k.grad(&data.point(s.candidate_index), &model.theta).unwrap();
            let naive = dot(&model.hinv().apply(&g).unwrap(), &vg);
            prop_assert!((naive - s.score).abs() <= 1e-8 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn top_m_is_sorted_prefix(scores in prop::collection::vec(-5i32..5, 1..40), m in 1usize..10) {
        let rs: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| infsel::influence::ResidualScore { candidate_index: i, score: f64::from(s) })
            .collect();
        let top = top_m(&rs, m);
        prop_assert_eq!(top.len(), m.min(rs.len()));
        for w in top.windows(2) {
            let (a, b) = (rs[w[0]].score, rs[w[1]].score);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
        let cutoff = rs[*top.last().unwrap()].score;
        prop_assert!(rs.iter().filter(|r| !top.contains(&r.candidate_index)).all(|r| r.score <= cutoff));
    }
}

#[test]
fn hinv_residual_bound_dense_and_cg() {
    let data = logistic_pool(3, 200, 8);
    let k = LossKernel::logistic(DEFAULT_LAMBDA, 8).unwrap();
    let sub_idx = range(0, 150);
    for threshold in [512, 4] {
        let cfg = SolverSettings { dense_threshold: threshold, ..Default::default() };
        let model = fit_erm(&k, &data, &sub_idx, None, &cfg).unwrap();
        assert_eq!(model.hinv().is_direct(), threshold == 512);
        let b: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 2.0).collect();
        let x = model.hinv().apply(&b).unwrap();
        let hx = k.hess_vec(&data, &sub_idx, &model.theta, &x).unwrap();
        let r = sub(&hx, &b);
        assert!(infsel::numkit::norm2(&r) <= 1e-6 * infsel::numkit::norm2(&b));
    }
}
