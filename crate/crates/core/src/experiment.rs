//! Per-seed experiment pipelines: split, standardize on the training rows,
//! append an intercept column, then run greedy and random selection (and,
//! for transfer and tuning, the downstream tree models).

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{split, SplitIndices, SplitSpec, Standardizer};
use crate::error::{Error, Result};
use crate::evaluators::{fit_tree_ensemble, rmse, Predictions, TreeEnsembleConfig};
use crate::losskernels::{Dataset, LossKernel, DEFAULT_LAMBDA};
use crate::selector::{epsilon_greedy_select, random_select, SelectionConfig, SelectionTrace, ValidationLoss};
use crate::tuner::{hyperband_run, pairwise_ranks, ForestFactory, SearchSpace, Subsampler, TunerConfig, TunerTrace};

pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_INITIAL: u64 = 2;
pub const STREAM_SELECT: u64 = 3;
pub const STREAM_MODEL: u64 = 4;

/// Independent seed for one purpose (`stream`) within run seed `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
    pub standardizer: Option<Standardizer>,
    /// Feature count before the intercept column was appended.
    pub raw_features: usize,
}

pub fn prepare(data: &Dataset, split_seed: u64, standardize: bool) -> Result<Prepared> {
    let s = split(data, &SplitSpec::with_seed(split_seed))?;
    let (train, validation, test, standardizer) = if standardize {
        let st = Standardizer::fit(&s.train);
        (st.apply(&s.train)?, st.apply(&s.validation)?, st.apply(&s.test)?, Some(st))
    } else {
        (s.train, s.validation, s.test, None)
    };
    Ok(Prepared {
        train: train.with_intercept(),
        validation: validation.with_intercept(),
        test: test.with_intercept(),
        indices: s.indices,
        standardizer,
        raw_features: data.n_features(),
    })
}

/// `max(d, 10)` uniformly drawn training rows (all rows when fewer exist).
pub fn initial_subset(n_train: usize, d: usize, seed: u64) -> Vec<usize> {
    let size = d.max(10).min(n_train);
    index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n_train, size).into_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub m: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub standardize: bool,
    pub candidate_cap: Option<usize>,
    pub record_wall_time: bool,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            m: 1,
            iterations: 200,
            epsilon: 0.0,
            lambda: DEFAULT_LAMBDA,
            standardize: true,
            candidate_cap: None,
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareRun {
    pub seed: u64,
    pub greedy: SelectionTrace,
    pub random: SelectionTrace,
}

struct SelectionSetup {
    prepared: Prepared,
    kernel: LossKernel,
    objective: ValidationLoss,
    initial: Vec<usize>,
    cfg: SelectionConfig,
}

fn setup(data: &Dataset, seed: u64, lambda: f64, standardize: bool, candidate_cap: Option<usize>, record_wall_time: bool)
    -> Result<SelectionSetup> {
    let prepared = prepare(data, derive_seed(seed, STREAM_SPLIT), standardize)?;
    let kernel = LossKernel::for_task(prepared.train.task(), lambda, prepared.train.n_features())?;
    let objective = ValidationLoss::new(kernel, prepared.validation.clone())?;
    let initial = initial_subset(prepared.train.len(), prepared.raw_features, derive_seed(seed, STREAM_INITIAL));
    let cfg = SelectionConfig {
        record_wall_time,
        candidate_cap,
        ..Default::default()
    };
    Ok(SelectionSetup {
        prepared,
        kernel,
        objective,
        initial,
        cfg,
    })
}

/// Greedy (epsilon-greedy) and random selection on one seed, both starting
/// from the same initial subset and tracking validation loss.
pub fn compare_seed(data: &Dataset, seed: u64, s: &CompareSettings) -> Result<CompareRun> {
    let st = setup(data, seed, s.lambda, s.standardize, s.candidate_cap, s.record_wall_time)?;
    let train = &st.prepared.train;
    let sel_seed = derive_seed(seed, STREAM_SELECT);
    let greedy = epsilon_greedy_select(
        &st.kernel,
        train,
        &st.initial,
        &st.objective,
        s.m,
        s.iterations,
        s.epsilon,
        sel_seed,
        &st.cfg,
    )?;
    let random = random_select(&st.kernel, train, &st.initial, &st.objective, s.m, s.iterations, sel_seed, &st.cfg)?;
    Ok(CompareRun { seed, greedy, random })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferSettings {
    pub m: usize,
    pub iterations: usize,
    pub eval_every: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub standardize: bool,
    pub evaluator: TreeEnsembleConfig,
    pub record_wall_time: bool,
}

impl Default for TransferSettings {
    fn default() -> Self {
        Self {
            m: 1,
            iterations: 200,
            eval_every: 10,
            epsilon: 0.0,
            lambda: DEFAULT_LAMBDA,
            standardize: true,
            evaluator: TreeEnsembleConfig::default(),
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferRun {
    pub seed: u64,
    pub greedy_trace: SelectionTrace,
    pub random_trace: SelectionTrace,
    /// `(step, validation RMSE of the tree ensemble)` at every checkpoint.
    pub greedy: Vec<(usize, f64)>,
    pub random: Vec<(usize, f64)>,
}

/// Subset after `step` selection steps of a trace.
pub fn subset_at(trace: &SelectionTrace, step: usize) -> Vec<usize> {
    let mut s = trace.initial_subset.clone();
    for st in trace.steps.iter().take(step + 1) {
        s.extend_from_slice(&st.added_indices);
    }
    s
}

/// Selects with the linear (squared) kernel, then scores a tree ensemble
/// trained on each checkpoint subset by validation RMSE.
pub fn transfer_seed(data: &Dataset, seed: u64, s: &TransferSettings) -> Result<TransferRun> {
    if data.task().is_classification() {
        return Err(Error::Config("transfer needs a regression dataset".into()));
    }
    if s.eval_every == 0 {
        return Err(Error::Config("eval-every must be at least 1".into()));
    }
    let run = compare_seed(
        data,
        seed,
        &CompareSettings {
            m: s.m,
            iterations: s.iterations,
            epsilon: s.epsilon,
            lambda: s.lambda,
            standardize: s.standardize,
            candidate_cap: None,
            record_wall_time: s.record_wall_time,
        },
    )?;
    let prepared = prepare(data, derive_seed(seed, STREAM_SPLIT), s.standardize)?;
    let evaluator = TreeEnsembleConfig {
        seed: derive_seed(seed, STREAM_MODEL),
        ..s.evaluator
    };
    let curve = |trace: &SelectionTrace| -> Result<Vec<(usize, f64)>> {
        let last = trace.steps.len() - 1;
        (0..=last)
            .step_by(s.eval_every)
            .map(|k| {
                let model = fit_tree_ensemble(&evaluator, &prepared.train, &subset_at(trace, k))?;
                match model.predict(prepared.validation.features())? {
                    Predictions::Values(v) => Ok((k, rmse(&v, prepared.validation.targets()))),
                    Predictions::Probabilities(_) => unreachable!("regression ensembles predict values"),
                }
            })
            .collect()
    };
    let greedy = curve(&run.greedy)?;
    let random = curve(&run.random)?;
    Ok(TransferRun {
        seed,
        greedy_trace: run.greedy,
        random_trace: run.random,
        greedy,
        random,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub tuner: TunerConfig,
    pub evaluator: TreeEnsembleConfig,
    /// Subsampler run against the random baseline.
    pub challenger: Subsampler,
    pub standardize: bool,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            tuner: TunerConfig::default(),
            evaluator: TreeEnsembleConfig::default(),
            challenger: Subsampler::Influence { epsilon: 0.0 },
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneRun {
    pub seed: u64,
    pub random: TunerTrace,
    pub challenger: TunerTrace,
    /// Rank of the challenger's incumbent per Hyperband iteration.
    pub challenger_ranks: Vec<f64>,
    /// Both arms started every bracket with identical configurations.
    pub configs_paired: bool,
}

/// Paired Hyperband runs that share the configuration stream and differ only
/// in the subsampler.
pub fn tune_seed(data: &Dataset, seed: u64, s: &TuneSettings) -> Result<TuneRun> {
    let prepared = prepare(data, derive_seed(seed, STREAM_SPLIT), s.standardize)?;
    let factory = ForestFactory {
        base: TreeEnsembleConfig {
            seed: derive_seed(seed, STREAM_MODEL),
            ..s.evaluator
        },
    };
    let space = SearchSpace::default_forest();
    let mut cfg = TunerConfig {
        seed,
        min_resource: Some(s.tuner.min_resource.unwrap_or(prepared.raw_features.max(10))),
        ..s.tuner.clone()
    };
    cfg.subsampler = Subsampler::Random;
    let random = hyperband_run(&space, &prepared.train, &prepared.validation, &factory, &cfg)?;
    cfg.subsampler = s.challenger;
    let challenger = hyperband_run(&space, &prepared.train, &prepared.validation, &factory, &cfg)?;
    let configs_paired = random.bracket_configs == challenger.bracket_configs
        && random
            .evaluations
            .iter()
            .zip(&challenger.evaluations)
            .filter(|(a, _)| a.rung == 0)
            .all(|(a, b)| a.config == b.config && a.config_index == b.config_index);
    let challenger_ranks = pairwise_ranks(&challenger, &random);
    Ok(TuneRun {
        seed,
        random,
        challenger,
        challenger_ranks,
        configs_paired,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub step: usize,
    pub mean_objective: f64,
    pub sd_objective: f64,
    pub method: String,
}

/// Mean and sample standard deviation per step across seeds. Steps missing
/// from some curves (pool exhaustion) average over the curves that have them.
pub fn summarize(method: &str, curves: &[Vec<(usize, f64)>]) -> Vec<SummaryRow> {
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in curves {
        for &(step, v) in c {
            by_step.entry(step).or_default().push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(step, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                step,
                mean_objective: mean,
                sd_objective: sd,
                method: method.to_string(),
            }
        })
        .collect()
}

pub fn trace_curve(trace: &SelectionTrace) -> Vec<(usize, f64)> {
    trace.steps.iter().map(|s| (s.step, s.objective)).collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "mean_objective", "sd_objective", "method"])?;
    for r in rows {
        wr.write_record([
            r.step.to_string(),
            r.mean_objective.to_string(),
            r.sd_objective.to_string(),
            r.method.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
