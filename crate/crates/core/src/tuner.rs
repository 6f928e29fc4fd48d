//! Hyperband over tree-ensemble hyperparameters where the training resource
//! is the subset size, and subsets come from a random or influence-greedy
//! subsampler.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::{evaluate, fit_tree_ensemble, MetricKind, TreeEnsembleConfig};
use crate::losskernels::{Dataset, LossKernel, Task, DEFAULT_LAMBDA};
use crate::selector::{epsilon_greedy_select, SelectionConfig, ValidationLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Dimension {
    Int { low: i64, high: i64 },
    Real { low: f64, high: f64, log: bool },
    Categorical { choices: Vec<String> },
    Bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            _ => None,
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

pub fn config_json(c: &Config) -> String {
    serde_json::to_string(c).expect("configs serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<(String, Dimension)>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<(String, Dimension)>) -> Result<Self> {
        for (name, d) in &dimensions {
            let ok = match d {
                Dimension::Int { low, high } => low <= high,
                Dimension::Real { low, high, log } => {
                    low.is_finite() && high.is_finite() && low <= high && (!log || *low > 0.0)
                }
                Dimension::Categorical { choices } => !choices.is_empty(),
                Dimension::Bool => true,
            };
            if !ok {
                return Err(Error::Config(format!("invalid range for dimension '{name}'")));
            }
        }
        Ok(Self { dimensions })
    }

    /// Forest search space: trees 5..=20, feature fraction 1%..100%,
    /// split and leaf minimums 2..=11, bootstrap on or off.
    pub fn default_forest() -> Self {
        Self::new(vec![
            ("n_trees".into(), Dimension::Int { low: 5, high: 20 }),
            (
                "max_features".into(),
                Dimension::Real {
                    low: 0.01,
                    high: 1.0,
                    log: false,
                },
            ),
            ("min_samples_split".into(), Dimension::Int { low: 2, high: 11 }),
            ("min_samples_leaf".into(), Dimension::Int { low: 2, high: 11 }),
            ("bootstrap".into(), Dimension::Bool),
        ])
        .expect("default space is valid")
    }
}

/// Draws every dimension independently: uniform, or log-uniform for log ranges.
pub fn sample_config(space: &SearchSpace, rng: &mut impl Rng) -> Config {
    space
        .dimensions
        .iter()
        .map(|(name, d)| {
            let v = match d {
                Dimension::Int { low, high } => ParamValue::Int(rng.random_range(*low..=*high)),
                Dimension::Real { low, high, log } => {
                    if low == high {
                        ParamValue::Real(*low)
                    } else if *log {
                        ParamValue::Real(rng.random_range(low.ln()..high.ln()).exp())
                    } else {
                        ParamValue::Real(rng.random_range(*low..*high))
                    }
                }
                Dimension::Categorical { choices } => {
                    ParamValue::Text(choices[rng.random_range(0..choices.len())].clone())
                }
                Dimension::Bool => ParamValue::Bool(rng.random_bool(0.5)),
            };
            (name.clone(), v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungEvaluation {
    pub rung: usize,
    pub config_index: usize,
    pub resource: usize,
    pub score: f64,
    pub error: Option<String>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingResult {
    /// Indices into the input configs, best first.
    pub survivors: Vec<usize>,
    pub survivor_scores: Vec<f64>,
    pub evaluations: Vec<RungEvaluation>,
}

/// Successive halving: evaluate every live config on the rung's subset and
/// keep the `ceil(n / eta)` lowest scores (ties to the lower index) after
/// each rung. A failed evaluation scores `+inf` and the run continues.
pub fn successive_halving(
    configs: &[Config],
    resources: &[usize],
    eta: usize,
    evaluate: &(dyn Fn(usize, &Config, &[usize]) -> Result<f64> + Sync),
    subset_provider: &mut dyn FnMut(usize) -> Result<Vec<usize>>,
    record_wall_time: bool,
) -> Result<HalvingResult> {
    if configs.is_empty() {
        return Err(Error::Config("successive halving needs at least one config".into()));
    }
    if eta < 2 {
        return Err(Error::Config(format!("eta must be at least 2, got {eta}")));
    }
    if resources.is_empty() || resources.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("resource schedule must be non-empty and strictly increasing".into()));
    }
    let mut alive: Vec<usize> = (0..configs.len()).collect();
    let mut scores = Vec::new();
    let mut evaluations = Vec::new();
    for (rung, &resource) in resources.iter().enumerate() {
        let subset = subset_provider(resource)?;
        let results: Vec<(f64, Option<String>, f64)> = alive
            .par_iter()
            .map(|&c| {
                let t = Instant::now();
                let (score, err) = match evaluate(c, &configs[c], &subset) {
                    Ok(s) if !s.is_nan() => (s, None),
                    Ok(_) => (f64::INFINITY, Some("NaN score".to_string())),
                    Err(e) => (f64::INFINITY, Some(e.to_string())),
                };
                let wall = if record_wall_time { t.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
                (score, err, wall)
            })
            .collect();
        let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(alive.len());
        for (&c, (score, error, wall)) in alive.iter().zip(results) {
            evaluations.push(RungEvaluation {
                rung,
                config_index: c,
                resource,
                score,
                error,
                wall_time_ms: wall,
            });
            ranked.push((c, score));
        }
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        ranked.truncate(alive.len().div_ceil(eta));
        alive = ranked.iter().map(|r| r.0).collect();
        scores = ranked.iter().map(|r| r.1).collect();
    }
    Ok(HalvingResult {
        survivors: alive,
        survivor_scores: scores,
        evaluations,
    })
}

/// Largest `s` with `min_resource * eta^s <= max_resource`.
pub fn s_max(max_resource: usize, min_resource: usize, eta: usize) -> Result<usize> {
    if min_resource == 0 || max_resource < min_resource {
        return Err(Error::Config(format!(
            "max resource {max_resource} is below the minimum resource {min_resource}"
        )));
    }
    let mut s = 0;
    let mut r = min_resource as u128;
    while r * eta as u128 <= max_resource as u128 {
        r *= eta as u128;
        s += 1;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub n_configs: usize,
    /// Rung resources, rounded to whole points.
    pub resources: Vec<usize>,
}

/// Bracket `s` starts `ceil((s_max+1)/(s+1) * eta^s)` configs at resource
/// `max_resource * eta^-s`, multiplying the resource by `eta` per rung.
pub fn bracket_schedule(max_resource: usize, min_resource: usize, eta: usize) -> Result<Vec<Bracket>> {
    if eta < 2 {
        return Err(Error::Config(format!("eta must be at least 2, got {eta}")));
    }
    let top = s_max(max_resource, min_resource, eta)?;
    Ok((0..=top)
        .rev()
        .map(|s| {
            let eta_s = (eta as u128).pow(s as u32);
            let n = ((top as u128 + 1) * eta_s).div_ceil(s as u128 + 1) as usize;
            let resources = (0..=s)
                .map(|i| {
                    let r = max_resource as f64 / (eta as f64).powi((s - i) as i32);
                    (r.round() as usize).clamp(1, max_resource)
                })
                .collect();
            Bracket {
                s,
                n_configs: n,
                resources,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Subsampler {
    Random,
    Influence { epsilon: f64 },
}

impl Subsampler {
    pub fn label(&self) -> String {
        match self {
            Subsampler::Random => "random".into(),
            Subsampler::Influence { epsilon } if *epsilon == 0.0 => "influence".into(),
            Subsampler::Influence { epsilon } => format!("influence({epsilon})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub eta_cycle: Vec<usize>,
    /// Defaults to the training-set size.
    pub max_resource: Option<usize>,
    /// Defaults to `max(d, 10)`.
    pub min_resource: Option<usize>,
    pub subsampler: Subsampler,
    pub seed: u64,
    pub hyperband_iterations: usize,
    /// Points added per greedy step when growing influence subsets.
    pub influence_batch: usize,
    pub lambda: f64,
    pub record_wall_time: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            eta_cycle: vec![2, 3, 4, 5],
            max_resource: None,
            min_resource: None,
            subsampler: Subsampler::Random,
            seed: 0,
            hyperband_iterations: 8,
            influence_batch: 1,
            lambda: DEFAULT_LAMBDA,
            record_wall_time: true,
        }
    }
}

/// Builds a model from a sampled configuration and returns its validation
/// score (lower is better).
pub trait ModelFactory: Sync {
    fn score(&self, config: &Config, config_index: usize, train: &Dataset, subset: &[usize], validation: &Dataset)
        -> Result<f64>;
    fn label(&self) -> String;
}

/// Random forests scored by validation RMSE (regression) or log-loss
/// (classification). Unknown config keys are ignored; missing ones keep
/// the base value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestFactory {
    pub base: TreeEnsembleConfig,
}

impl ForestFactory {
    pub fn build_config(&self, config: &Config, config_index: usize) -> Result<TreeEnsembleConfig> {
        let mut c = self.base;
        let int = |k: &str| -> Result<Option<usize>> {
            match config.get(k) {
                None => Ok(None),
                Some(ParamValue::Int(v)) if *v >= 0 => Ok(Some(*v as usize)),
                Some(other) => Err(Error::Config(format!("parameter '{k}' must be a non-negative integer, got {other:?}"))),
            }
        };
        if let Some(v) = int("n_trees")? {
            c.n_trees = v;
        }
        if let Some(v) = int("min_samples_split")? {
            c.min_samples_split = v;
        }
        if let Some(v) = int("min_samples_leaf")? {
            c.min_samples_leaf = v;
        }
        if let Some(v) = int("max_depth")? {
            c.max_depth = v;
        }
        if let Some(v) = config.get("max_features") {
            c.max_features_fraction = v
                .as_f64()
                .ok_or_else(|| Error::Config("parameter 'max_features' must be numeric".into()))?;
        }
        if let Some(v) = config.get("bootstrap") {
            match v {
                ParamValue::Bool(b) => c.bootstrap = *b,
                other => return Err(Error::Config(format!("parameter 'bootstrap' must be boolean, got {other:?}"))),
            }
        }
        c.seed = self
            .base
            .seed
            .wrapping_mul(0x1000_0000_01b3)
            .wrapping_add(config_index as u64);
        c.validate()?;
        Ok(c)
    }
}

impl ModelFactory for ForestFactory {
    fn score(
        &self,
        config: &Config,
        config_index: usize,
        train: &Dataset,
        subset: &[usize],
        validation: &Dataset,
    ) -> Result<f64> {
        let cfg = self.build_config(config, config_index)?;
        let model = fit_tree_ensemble(&cfg, train, subset)?;
        let preds = model.predict(validation.features())?;
        let metric = match train.task() {
            Task::Regression => MetricKind::Rmse,
            Task::Classification { .. } => MetricKind::Logloss,
        };
        evaluate(&preds, validation.targets(), metric)
    }

    fn label(&self) -> String {
        format!("{:?}", self.base.mode).to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerEvaluation {
    pub hyperband_iter: usize,
    pub eta: usize,
    pub bracket: usize,
    pub rung: usize,
    pub config_index: usize,
    pub config: Config,
    pub resource: usize,
    pub score: f64,
    pub error: Option<String>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub hyperband_iter: usize,
    pub eta: usize,
    /// Best full-resource validation score seen up to and including this iteration.
    pub score: f64,
    pub config_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerTrace {
    pub subsampler: String,
    pub seed: u64,
    pub min_resource: usize,
    pub max_resource: usize,
    pub eta_cycle: Vec<usize>,
    pub evaluations: Vec<TunerEvaluation>,
    pub incumbents: Vec<Incumbent>,
    /// Per Hyperband iteration and bracket, the sorted config indices the bracket started with.
    pub bracket_configs: Vec<(usize, usize, Vec<usize>)>,
}

impl TunerTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["hyperband_iter", "bracket", "rung", "config_json", "resource", "score", "wall_time_ms"])?;
        for e in &self.evaluations {
            wr.write_record([
                e.hyperband_iter.to_string(),
                e.bracket.to_string(),
                e.rung.to_string(),
                config_json(&e.config),
                e.resource.to_string(),
                e.score.to_string(),
                format!("{:.3}", e.wall_time_ms),
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

    pub fn incumbent_scores(&self) -> Vec<f64> {
        self.incumbents.iter().map(|i| i.score).collect()
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stream.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Seeded nested subsets for a training set: the random arm takes prefixes
/// of one permutation, the influence arm prefixes of one greedy ordering
/// grown with the proxy kernel from the permutation's first `min_resource`
/// points.
pub fn subset_ordering(train: &Dataset, validation: &Dataset, cfg: &TunerConfig, min_resource: usize, max_resource: usize)
    -> Result<Vec<usize>> {
    let mut perm: Vec<usize> = (0..train.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1)));
    match cfg.subsampler {
        Subsampler::Random => {
            perm.truncate(max_resource);
            Ok(perm)
        }
        Subsampler::Influence { epsilon } => {
            let kernel = LossKernel::for_task(train.task(), cfg.lambda, train.n_features())?;
            let objective = ValidationLoss::new(kernel, validation.clone())?;
            let initial = &perm[..min_resource.min(train.len())];
            let m = cfg.influence_batch.max(1);
            let iterations = max_resource.saturating_sub(initial.len()).div_ceil(m);
            let sel_cfg = SelectionConfig {
                record_wall_time: false,
                ..Default::default()
            };
            let trace = epsilon_greedy_select(
                &kernel,
                train,
                initial,
                &objective,
                m,
                iterations,
                epsilon,
                stream_seed(cfg.seed, 2),
                &sel_cfg,
            )?;
            let mut order = trace.final_subset();
            order.truncate(max_resource);
            Ok(order)
        }
    }
}

/// Runs `cfg.hyperband_iterations` Hyperband iterations, cycling `eta`
/// through `cfg.eta_cycle`. Configurations are drawn from a stream that
/// depends only on `cfg.seed`, so runs that differ only in the subsampler
/// see identical candidates.
pub fn hyperband_run(
    space: &SearchSpace,
    train: &Dataset,
    validation: &Dataset,
    factory: &dyn ModelFactory,
    cfg: &TunerConfig,
) -> Result<TunerTrace> {
    if cfg.eta_cycle.is_empty() || cfg.eta_cycle.iter().any(|&e| e < 2) {
        return Err(Error::Config("every eta in the cycle must be at least 2".into()));
    }
    let max_resource = cfg.max_resource.unwrap_or(train.len());
    if max_resource > train.len() {
        return Err(Error::Config(format!(
            "max resource {max_resource} exceeds the training-set size {}",
            train.len()
        )));
    }
    let min_resource = cfg.min_resource.unwrap_or(train.n_features().max(10));
    s_max(max_resource, min_resource, 2)?;
    let ordering = subset_ordering(train, validation, cfg, min_resource, max_resource)?;

    let mut config_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 0));
    let mut evaluations = Vec::new();
    let mut incumbents: Vec<Incumbent> = Vec::new();
    let mut bracket_configs = Vec::new();
    let mut next_index = 0usize;
    let mut best: Option<(f64, usize)> = None;

    for it in 0..cfg.hyperband_iterations {
        let eta = cfg.eta_cycle[it % cfg.eta_cycle.len()];
        for bracket in bracket_schedule(max_resource, min_resource, eta)? {
            let configs: Vec<Config> = (0..bracket.n_configs).map(|_| sample_config(space, &mut config_rng)).collect();
            let base = next_index;
            next_index += configs.len();
            bracket_configs.push((it, bracket.s, (base..next_index).collect()));
            let eval = |c: usize, config: &Config, subset: &[usize]| factory.score(config, base + c, train, subset, validation);
            let mut provider = |r: usize| Ok(ordering[..r.min(ordering.len())].to_vec());
            let mut resources = bracket.resources.clone();
            resources.dedup();
            let result = successive_halving(&configs, &resources, eta, &eval, &mut provider, cfg.record_wall_time)?;
            for e in result.evaluations {
                if e.resource == max_resource && best.is_none_or(|(s, _)| e.score < s) {
                    best = Some((e.score, base + e.config_index));
                }
                evaluations.push(TunerEvaluation {
                    hyperband_iter: it,
                    eta,
                    bracket: bracket.s,
                    rung: e.rung,
                    config_index: base + e.config_index,
                    config: configs[e.config_index].clone(),
                    resource: e.resource,
                    score: e.score,
                    error: e.error,
                    wall_time_ms: e.wall_time_ms,
                });
            }
        }
        let (score, config_index) = best.unwrap_or((f64::INFINITY, 0));
        incumbents.push(Incumbent {
            hyperband_iter: it,
            eta,
            score,
            config_index,
        });
    }
    Ok(TunerTrace {
        subsampler: cfg.subsampler.label(),
        seed: cfg.seed,
        min_resource,
        max_resource,
        eta_cycle: cfg.eta_cycle.clone(),
        evaluations,
        incumbents,
        bracket_configs,
    })
}

/// Per-iteration rank of `a`'s incumbent against `b`'s: 1 if strictly
/// better (lower), 2 if worse, 1.5 on exact ties.
pub fn pairwise_ranks(a: &TunerTrace, b: &TunerTrace) -> Vec<f64> {
    a.incumbents
        .iter()
        .zip(&b.incumbents)
        .map(|(x, y)| {
            if x.score < y.score {
                1.0
            } else if x.score > y.score {
                2.0
            } else {
                1.5
            }
        })
        .collect()
}
