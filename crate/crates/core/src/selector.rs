//! Subset-selection strategies: influence-ranked epsilon-greedy growth, the
//! exact retraining oracle, uniform random growth, and one-step gap
//! diagnostics computed by exact retraining.

use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{residual_scores_for_gradient, top_m};
use crate::losskernels::{fit_erm, Dataset, FittedModel, LossKernel, SolverSettings};

pub const DEFAULT_BUDGET_CAP: u128 = 1_000_000;
pub const MIN_MONTE_CARLO_DRAWS: usize = 1000;

/// The quantity `R(theta)` a selection strategy tries to drive down.
pub trait Objective: Send + Sync {
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
    fn label(&self) -> String;

    fn value_of(&self, model: &FittedModel) -> f64 {
        self.value(&model.theta)
    }
}

/// Mean regularized kernel loss over a validation set.
#[derive(Debug, Clone)]
pub struct ValidationLoss {
    kernel: LossKernel,
    data: Dataset,
    rows: Vec<usize>,
}

impl ValidationLoss {
    pub fn new(kernel: LossKernel, validation: Dataset) -> Result<Self> {
        kernel.check_dataset(&validation)?;
        let rows = (0..validation.len()).collect();
        Ok(Self {
            kernel,
            data: validation,
            rows,
        })
    }
}

impl Objective for ValidationLoss {
    fn value(&self, theta: &[f64]) -> f64 {
        self.kernel.mean_loss_unchecked(&self.data, &self.rows, theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.kernel.mean_grad_unchecked(&self.data, &self.rows, theta)
    }

    fn label(&self) -> String {
        format!("validation_{}_loss", self.kernel.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Greedy,
    EpsilonGreedy { epsilon: f64 },
    Random,
    ExactOracle,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Greedy => "greedy".into(),
            Strategy::EpsilonGreedy { epsilon } => format!("epsilon_greedy({epsilon})"),
            Strategy::Random => "random".into(),
            Strategy::ExactOracle => "exact_oracle".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub added_indices: Vec<usize>,
    pub objective: f64,
    pub cumulative_points: usize,
    pub wall_time_ms: f64,
}

/// Step 0 holds the objective of the initial refit; step `k` the objective
/// after the `k`-th batch was added and the model refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub strategy: Strategy,
    pub m: usize,
    pub initial_subset: Vec<usize>,
    pub steps: Vec<SelectionStep>,
    pub seed: u64,
    pub exhausted: bool,
    pub objective_label: String,
    pub kernel: LossKernel,
}

impl SelectionTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }

    /// Every selected index, in selection order, including the initial subset.
    pub fn final_subset(&self) -> Vec<usize> {
        let mut out = self.initial_subset.clone();
        for s in &self.steps {
            out.extend_from_slice(&s.added_indices);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "added_indices", "objective", "cumulative_points", "wall_time_ms"])?;
        for s in &self.steps {
            let added = s
                .added_indices
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";");
            wr.write_record([
                s.step.to_string(),
                added,
                s.objective.to_string(),
                s.cumulative_points.to_string(),
                format!("{:.3}", s.wall_time_ms),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub solver: SolverSettings,
    /// When false all wall times are recorded as zero, making traces byte-stable.
    pub record_wall_time: bool,
    /// Score only a uniform sub-pool of this size per iteration.
    pub candidate_cap: Option<usize>,
    /// Maximum number of exact refits the oracle and delta routines may run.
    pub budget_cap: u128,
    /// Monte-Carlo draws for `compute_deltas` when the exact enumeration
    /// exceeds `budget_cap`; `None` turns that case into a budget error.
    pub monte_carlo_draws: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            record_wall_time: true,
            candidate_cap: None,
            budget_cap: DEFAULT_BUDGET_CAP,
            monte_carlo_draws: None,
        }
    }
}

fn check_initial(pool: &Dataset, initial: &[usize]) -> Result<Vec<bool>> {
    if initial.is_empty() {
        return Err(Error::Contract("initial subset is empty".into()));
    }
    let mut chosen = vec![false; pool.len()];
    for &i in initial {
        if i >= pool.len() {
            return Err(Error::Contract(format!("subset index {i} out of range")));
        }
        if std::mem::replace(&mut chosen[i], true) {
            return Err(Error::Contract(format!("subset index {i} repeated")));
        }
    }
    Ok(chosen)
}

fn unchosen(pool: &Dataset, subset: &[usize]) -> Result<Vec<usize>> {
    let chosen = check_initial(pool, subset)?;
    Ok((0..pool.len()).filter(|&i| !chosen[i]).collect())
}

/// Removes `take` uniformly chosen entries from `remaining` and returns them.
fn draw_random(remaining: &mut Vec<usize>, take: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut positions = index::sample(rng, remaining.len(), take).into_vec();
    let picked: Vec<usize> = positions.iter().map(|&p| remaining[p]).collect();
    positions.sort_unstable_by(|a, b| b.cmp(a));
    for p in positions {
        remaining.remove(p);
    }
    picked
}

#[derive(Clone, Copy)]
enum Mode {
    Epsilon(f64),
    Random,
}

#[allow(clippy::too_many_arguments)]
fn run_selection(
    kernel: &LossKernel,
    pool: &Dataset,
    initial_subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    iterations: usize,
    mode: Mode,
    seed: u64,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    if m == 0 {
        return Err(Error::Config("batch size m must be at least 1".into()));
    }
    let chosen = check_initial(pool, initial_subset)?;
    let mut remaining: Vec<usize> = (0..pool.len()).filter(|&i| !chosen[i]).collect();
    let mut subset = initial_subset.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = Instant::now();
    let elapsed = |c: &Instant| {
        if cfg.record_wall_time {
            c.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };

    let mut model = fit_erm(kernel, pool, &subset, None, &cfg.solver)?;
    let mut steps = vec![SelectionStep {
        step: 0,
        added_indices: Vec::new(),
        objective: objective.value_of(&model),
        cumulative_points: subset.len(),
        wall_time_ms: elapsed(&clock),
    }];
    let mut exhausted = false;

    for k in 1..=iterations {
        if remaining.is_empty() {
            exhausted = true;
            break;
        }
        let take = m.min(remaining.len());
        if take < m {
            exhausted = true;
        }
        let random_branch = match mode {
            Mode::Random => true,
            Mode::Epsilon(e) if e >= 1.0 => true,
            Mode::Epsilon(e) if e <= 0.0 => false,
            Mode::Epsilon(e) => rng.random::<f64>() < e,
        };
        let added = if random_branch {
            draw_random(&mut remaining, take, &mut rng)
        } else {
            let candidates = match cfg.candidate_cap {
                Some(cap) if cap < remaining.len() => {
                    let mut pos = index::sample(&mut rng, remaining.len(), cap.max(take)).into_vec();
                    pos.sort_unstable();
                    pos.into_iter().map(|p| remaining[p]).collect()
                }
                _ => remaining.clone(),
            };
            let grad = objective.gradient(&model.theta);
            let scores = residual_scores_for_gradient(&model, &grad, &candidates)?;
            let picked = top_m(&scores, take);
            remaining.retain(|i| !picked.contains(i));
            picked
        };
        subset.extend_from_slice(&added);
        model = fit_erm(kernel, pool, &subset, Some(&model.theta), &cfg.solver)?;
        steps.push(SelectionStep {
            step: k,
            added_indices: added,
            objective: objective.value_of(&model),
            cumulative_points: subset.len(),
            wall_time_ms: elapsed(&clock),
        });
        if exhausted {
            break;
        }
    }

    let strategy = match mode {
        Mode::Random => Strategy::Random,
        Mode::Epsilon(e) if e == 0.0 => Strategy::Greedy,
        Mode::Epsilon(e) => Strategy::EpsilonGreedy { epsilon: e },
    };
    Ok(SelectionTrace {
        strategy,
        m,
        initial_subset: initial_subset.to_vec(),
        steps,
        seed,
        exhausted,
        objective_label: objective.label(),
        kernel: *kernel,
    })
}

/// Approximate local epsilon-greedy growth. Each iteration refits on the
/// current subset (warm start), then with probability `epsilon` adds `m`
/// uniform points, otherwise the `m` candidates with the largest residual
/// scores from a single ranking pass. With `epsilon` equal to 0 or 1 no coin
/// is drawn.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_greedy_select(
    kernel: &LossKernel,
    pool: &Dataset,
    initial_subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    iterations: usize,
    epsilon: f64,
    seed: u64,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    run_selection(kernel, pool, initial_subset, objective, m, iterations, Mode::Epsilon(epsilon), seed, cfg)
}

/// Uniform random growth without replacement, refitting after every batch.
#[allow(clippy::too_many_arguments)]
pub fn random_select(
    kernel: &LossKernel,
    pool: &Dataset,
    initial_subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    iterations: usize,
    seed: u64,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    run_selection(kernel, pool, initial_subset, objective, m, iterations, Mode::Random, seed, cfg)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// All `m`-subsets of `items` in lexicographic order of positions.
fn combinations(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut pos: Vec<usize> = (0..m).collect();
    loop {
        out.push(pos.iter().map(|&p| items[p]).collect());
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if pos[i] < n - m + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        if pos[i] >= n - m + i {
            return out;
        }
        pos[i] += 1;
        for j in (i + 1)..m {
            pos[j] = pos[j - 1] + 1;
        }
    }
}

fn refit_value(
    kernel: &LossKernel,
    pool: &Dataset,
    subset: &[usize],
    extra: &[usize],
    warm: &[f64],
    objective: &dyn Objective,
    solver: &SolverSettings,
) -> Result<f64> {
    let mut s = subset.to_vec();
    s.extend_from_slice(extra);
    let model = fit_erm(kernel, pool, &s, Some(warm), solver)?;
    Ok(objective.value_of(&model))
}

fn exact_values(
    kernel: &LossKernel,
    pool: &Dataset,
    subset: &[usize],
    objective: &dyn Objective,
    combos: &[Vec<usize>],
    cfg: &SelectionConfig,
) -> Result<Vec<f64>> {
    let base = fit_erm(kernel, pool, subset, None, &cfg.solver)?;
    combos
        .par_iter()
        .map(|c| refit_value(kernel, pool, subset, c, &base.theta, objective, &cfg.solver))
        .collect()
}

/// One step of the exact local greedy oracle: refit on `subset` plus every
/// candidate `m`-subset and keep the one with the lowest objective (ties go
/// to the lexicographically smallest index tuple).
pub fn exact_greedy_step(
    kernel: &LossKernel,
    pool: &Dataset,
    subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    cfg: &SelectionConfig,
) -> Result<(Vec<usize>, FittedModel)> {
    let remaining = unchosen(pool, subset)?;
    if m == 0 || remaining.len() < m {
        return Err(Error::Contract(format!(
            "need m = {m} >= 1 unchosen points, {} available",
            remaining.len()
        )));
    }
    let required = binomial(remaining.len(), m);
    if required > cfg.budget_cap {
        return Err(Error::Budget {
            required,
            cap: cfg.budget_cap,
        });
    }
    let combos = combinations(&remaining, m);
    let values = exact_values(kernel, pool, subset, objective, &combos, cfg)?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let chosen = combos[best].clone();
    let mut s = subset.to_vec();
    s.extend_from_slice(&chosen);
    let model = fit_erm(kernel, pool, &s, None, &cfg.solver)?;
    Ok((chosen, model))
}

/// Exact oracle growth: repeats [`exact_greedy_step`] for `iterations` steps.
pub fn exact_greedy_select(
    kernel: &LossKernel,
    pool: &Dataset,
    initial_subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    iterations: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionTrace> {
    let clock = Instant::now();
    let wall = |c: &Instant| if cfg.record_wall_time { c.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let model = fit_erm(kernel, pool, initial_subset, None, &cfg.solver)?;
    let mut subset = initial_subset.to_vec();
    let mut steps = vec![SelectionStep {
        step: 0,
        added_indices: vec![],
        objective: objective.value_of(&model),
        cumulative_points: subset.len(),
        wall_time_ms: wall(&clock),
    }];
    let mut exhausted = false;
    for k in 1..=iterations {
        let left = pool.len() - subset.len();
        if left < m {
            exhausted = true;
            break;
        }
        let (chosen, model) = exact_greedy_step(kernel, pool, &subset, objective, m, cfg)?;
        subset.extend_from_slice(&chosen);
        steps.push(SelectionStep {
            step: k,
            added_indices: chosen,
            objective: objective.value_of(&model),
            cumulative_points: subset.len(),
            wall_time_ms: wall(&clock),
        });
    }
    Ok(SelectionTrace {
        strategy: Strategy::ExactOracle,
        m,
        initial_subset: initial_subset.to_vec(),
        steps,
        seed: 0,
        exhausted,
        objective_label: objective.label(),
        kernel: *kernel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeltaEstimate {
    Exact { subsets: u128 },
    MonteCarlo { draws: usize, std_error: f64 },
}

/// One-step gaps of the greedy choice against the average random choice
/// (`delta_prime`) and against the worst choice (`delta_double_prime`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta_prime: f64,
    pub delta_double_prime: f64,
    pub greedy_value: f64,
    pub mean_value: f64,
    pub worst_value: f64,
    pub subset_size: usize,
    pub m: usize,
    pub estimate: DeltaEstimate,
}

/// Computes the gaps by exact retraining over every candidate `m`-subset.
/// Beyond the budget cap the mean is estimated from seeded Monte-Carlo draws
/// and the best and worst batches come from the influence ranking, which is
/// only available when `cfg.monte_carlo_draws` is set.
pub fn compute_deltas(
    kernel: &LossKernel,
    pool: &Dataset,
    subset: &[usize],
    objective: &dyn Objective,
    m: usize,
    seed: u64,
    cfg: &SelectionConfig,
) -> Result<DeltaReport> {
    let remaining = unchosen(pool, subset)?;
    if m == 0 || remaining.len() < m {
        return Err(Error::Contract(format!(
            "need m = {m} >= 1 unchosen points, {} available",
            remaining.len()
        )));
    }
    let required = binomial(remaining.len(), m);
    if required <= cfg.budget_cap {
        let combos = combinations(&remaining, m);
        let values = exact_values(kernel, pool, subset, objective, &combos, cfg)?;
        let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let worst = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // the mean lies in [best, worst]; clamping removes summation rounding
        let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(best, worst);
        return Ok(DeltaReport {
            delta_prime: best - mean,
            delta_double_prime: best - worst,
            greedy_value: best,
            mean_value: mean,
            worst_value: worst,
            subset_size: subset.len(),
            m,
            estimate: DeltaEstimate::Exact { subsets: required },
        });
    }
    let draws = match cfg.monte_carlo_draws {
        Some(d) => d.max(MIN_MONTE_CARLO_DRAWS),
        None => {
            return Err(Error::Budget {
                required,
                cap: cfg.budget_cap,
            })
        }
    };
    let base = fit_erm(kernel, pool, subset, None, &cfg.solver)?;
    let grad = objective.gradient(&base.theta);
    let scores = residual_scores_for_gradient(&base, &grad, &remaining)?;
    let best_batch = top_m(&scores, m);
    let mut flipped = scores.clone();
    flipped.iter_mut().for_each(|s| s.score = -s.score);
    let worst_batch = top_m(&flipped, m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches: Vec<Vec<usize>> = (0..draws)
        .map(|_| {
            index::sample(&mut rng, remaining.len(), m)
                .into_iter()
                .map(|p| remaining[p])
                .collect()
        })
        .collect();
    let eval = |b: &Vec<usize>| refit_value(kernel, pool, subset, b, &base.theta, objective, &cfg.solver);
    let sampled: Vec<f64> = batches.par_iter().map(eval).collect::<Result<_>>()?;
    let greedy_value = eval(&best_batch)?;
    let worst_value = eval(&worst_batch)?;
    let n = sampled.len() as f64;
    let mean = sampled.iter().sum::<f64>() / n;
    let var = sampled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DeltaReport {
        delta_prime: greedy_value - mean,
        delta_double_prime: greedy_value - worst_value,
        greedy_value,
        mean_value: mean,
        worst_value,
        subset_size: subset.len(),
        m,
        estimate: DeltaEstimate::MonteCarlo {
            draws,
            std_error: (var / n).sqrt(),
        },
    })
}
