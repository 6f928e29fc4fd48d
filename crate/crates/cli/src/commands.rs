use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use infsel::dataio::{gen_synthetic, load_csv, CsvSchema, SyntheticParams, TargetColumn};
use infsel::evaluators::TreeEnsembleConfig;
use infsel::experiment::{
    compare_seed, summarize, trace_curve, transfer_seed, tune_seed, write_summary_csv, CompareSettings, SummaryRow,
    TransferSettings, TuneSettings,
};
use infsel::losskernels::Dataset;
use infsel::selector::SelectionTrace;
use infsel::tuner::{Subsampler, TunerConfig};
use infsel::verify::{run_properties, PropertyReport, VerifyOptions};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{Cli, Command, CompareArgs, DataArgs, RunArgs, SelectionArgs, TransferArgs, TuneArgs, VerifyArgs};
use crate::manifest::{DatasetInfo, Fingerprint, RunManifest};

pub const EXIT_OK: i32 = 0;
/// Every seed failed, a verify property failed, or an I/O error occurred.
pub const EXIT_FAILURE: i32 = 1;
/// Invalid flags or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Some seeds failed; their errors are in `errors.csv`.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Compare(a) => cmd_compare(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<infsel::Error>(), Some(infsel::Error::Config(_)));
            if config {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

struct Source {
    datasets: Vec<(u64, Dataset)>,
    info: DatasetInfo,
    config: serde_json::Value,
}

fn load_source(args: &DataArgs, seeds: &[u64]) -> Result<Source> {
    if let Some(kind) = args.synthetic {
        let params = SyntheticParams::default();
        let datasets = seeds
            .iter()
            .map(|&s| Ok((s, gen_synthetic(kind, args.n, args.d, s, &params)?)))
            .collect::<Result<Vec<_>>>()?;
        let fingerprints = datasets.iter().map(|(s, d)| Fingerprint::of(d, Some(*s))).collect();
        return Ok(Source {
            datasets,
            info: DatasetInfo {
                source: format!("synthetic:{}", kind.name()),
                fingerprints,
            },
            config: json!({
                "synthetic": kind.name(),
                "n": args.n,
                "d": args.d,
                "params": params,
                "standardize": !args.no_standardize,
            }),
        });
    }
    let path = args.data.as_ref().ok_or_else(|| usage("either --data or --synthetic is required"))?;
    let target = args
        .target_col
        .as_ref()
        .ok_or_else(|| usage("--target-col is required with --data"))?;
    let target = match target.parse::<usize>() {
        Ok(i) => TargetColumn::Index(i),
        Err(_) => TargetColumn::Name(target.clone()),
    };
    let schema = CsvSchema {
        target,
        task: args.task,
        has_header: !args.no_header,
    };
    let data = load_csv(path, &schema).with_context(|| format!("loading {}", path.display()))?;
    let info = DatasetInfo {
        source: format!("csv:{}", path.display()),
        fingerprints: vec![Fingerprint::of(&data, None)],
    };
    Ok(Source {
        datasets: seeds.iter().map(|&s| (s, data.clone())).collect(),
        info,
        config: json!({
            "data": path,
            "schema": schema,
            "standardize": !args.no_standardize,
        }),
    })
}

fn seed_list(run: &RunArgs) -> Result<Vec<u64>> {
    if run.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    Ok((run.seed..run.seed + run.seeds).collect())
}

fn check_selection(s: &SelectionArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&s.epsilon) {
        return Err(usage(format!("--epsilon must lie in [0, 1], got {}", s.epsilon)));
    }
    if s.m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    if !(s.lambda >= 0.0) {
        return Err(usage("--lambda must be non-negative"));
    }
    Ok(())
}

fn out_dir(run: &RunArgs, command: &str) -> Result<PathBuf> {
    let dir = run.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
    fs::create_dir_all(dir.join("traces")).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes a CSV whose first line names the manifest it belongs to.
fn write_tagged(path: &Path, manifest_id: &str, body: impl FnOnce(&mut Vec<u8>) -> infsel::Result<()>) -> Result<()> {
    let mut buf = format!("# manifest: {manifest_id}\n").into_bytes();
    body(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    manifest.finish();
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?).with_context(|| format!("writing {}", path.display()))
}

fn run_seeds<T: Send>(
    jobs: Option<usize>,
    datasets: &[(u64, Dataset)],
    f: impl Fn(u64, &Dataset) -> infsel::Result<T> + Sync,
) -> Result<Vec<(u64, infsel::Result<T>)>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    Ok(pool.install(|| datasets.par_iter().map(|(s, d)| (*s, f(*s, d))).collect()))
}

/// Splits per-seed results into successes and `(seed, message)` failures,
/// writing `errors.csv` when there are any.
fn partition<T>(dir: &Path, manifest_id: &str, results: Vec<(u64, infsel::Result<T>)>) -> Result<(Vec<T>, Vec<(u64, String)>)> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    if !failed.is_empty() {
        write_tagged(&dir.join("errors.csv"), manifest_id, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["seed", "error"])?;
            for (s, e) in &failed {
                w.write_record([s.to_string(), e.clone()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    Ok((ok, failed))
}

fn exit_code(succeeded: usize, failed: usize) -> i32 {
    match (succeeded, failed) {
        (_, 0) => EXIT_OK,
        (0, _) => EXIT_FAILURE,
        _ => EXIT_PARTIAL,
    }
}

fn write_trace(dir: &Path, id: &str, name: &str, trace: &SelectionTrace) -> Result<()> {
    write_tagged(&dir.join("traces").join(name), id, |buf| trace.write_csv(buf))
}

fn write_summary(dir: &Path, id: &str, rows: &[SummaryRow]) -> Result<()> {
    write_tagged(&dir.join("summary.csv"), id, |buf| write_summary_csv(rows, buf))
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    check_selection(&a.selection)?;
    let seeds = seed_list(&a.run)?;
    let settings = CompareSettings {
        m: a.selection.m,
        iterations: a.selection.iters,
        epsilon: a.selection.epsilon,
        lambda: a.selection.lambda,
        standardize: !a.data.no_standardize,
        candidate_cap: None,
        record_wall_time: true,
    };
    let source = load_source(&a.data, &seeds)?;
    let config = json!({ "data": source.config, "selection": settings });
    let mut manifest = RunManifest::new("compare", config, seeds, Some(source.info.clone()));
    let dir = out_dir(&a.run, "compare")?;
    let results = run_seeds(a.run.jobs, &source.datasets, |s, d| compare_seed(d, s, &settings))?;
    let (runs, failed) = partition(&dir, &manifest.id, results)?;

    for r in &runs {
        write_trace(&dir, &manifest.id, &format!("greedy_seed{}.csv", r.seed), &r.greedy)?;
        write_trace(&dir, &manifest.id, &format!("random_seed{}.csv", r.seed), &r.random)?;
    }
    if let Some(first) = runs.first() {
        let greedy: Vec<_> = runs.iter().map(|r| trace_curve(&r.greedy)).collect();
        let random: Vec<_> = runs.iter().map(|r| trace_curve(&r.random)).collect();
        let mut rows = summarize(&first.greedy.strategy.label(), &greedy);
        rows.extend(summarize("random", &random));
        write_summary(&dir, &manifest.id, &rows)?;
    }
    write_manifest(&dir, &mut manifest)?;
    println!("compare: {} seeds ok, {} failed; output in {}", runs.len(), failed.len(), dir.display());
    Ok(exit_code(runs.len(), failed.len()))
}

pub fn cmd_transfer(a: &TransferArgs) -> Result<i32> {
    check_selection(&a.selection)?;
    if a.eval_every == 0 {
        return Err(usage("--eval-every must be at least 1"));
    }
    let evaluator = TreeEnsembleConfig {
        mode: a.evaluator.evaluator,
        n_trees: a.evaluator.n_trees,
        max_depth: a.evaluator.max_depth,
        learning_rate: a.evaluator.learning_rate,
        ..TreeEnsembleConfig::default()
    };
    evaluator.validate()?;
    let seeds = seed_list(&a.run)?;
    let settings = TransferSettings {
        m: a.selection.m,
        iterations: a.selection.iters,
        eval_every: a.eval_every,
        epsilon: a.selection.epsilon,
        lambda: a.selection.lambda,
        standardize: !a.data.no_standardize,
        evaluator,
        record_wall_time: true,
    };
    let source = load_source(&a.data, &seeds)?;
    if let Some((_, d)) = source.datasets.first() {
        if d.task().is_classification() {
            return Err(usage("transfer needs a regression dataset"));
        }
    }
    let config = json!({ "data": source.config, "transfer": settings });
    let mut manifest = RunManifest::new("transfer", config, seeds, Some(source.info.clone()));
    let dir = out_dir(&a.run, "transfer")?;
    let results = run_seeds(a.run.jobs, &source.datasets, |s, d| transfer_seed(d, s, &settings))?;
    let (runs, failed) = partition(&dir, &manifest.id, results)?;

    for r in &runs {
        write_trace(&dir, &manifest.id, &format!("greedy_seed{}.csv", r.seed), &r.greedy_trace)?;
        write_trace(&dir, &manifest.id, &format!("random_seed{}.csv", r.seed), &r.random_trace)?;
        for (method, curve) in [("greedy", &r.greedy), ("random", &r.random)] {
            let path = dir.join("traces").join(format!("{method}_tree_seed{}.csv", r.seed));
            write_tagged(&path, &manifest.id, |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["step", "validation_rmse"])?;
                for (step, v) in curve {
                    w.write_record([step.to_string(), v.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
        }
    }
    if let Some(first) = runs.first() {
        let greedy: Vec<_> = runs.iter().map(|r| r.greedy.clone()).collect();
        let random: Vec<_> = runs.iter().map(|r| r.random.clone()).collect();
        let mut rows = summarize(&first.greedy_trace.strategy.label(), &greedy);
        rows.extend(summarize("random", &random));
        write_summary(&dir, &manifest.id, &rows)?;
    }
    write_manifest(&dir, &mut manifest)?;
    println!("transfer: {} seeds ok, {} failed; output in {}", runs.len(), failed.len(), dir.display());
    Ok(exit_code(runs.len(), failed.len()))
}

pub fn cmd_tune(a: &TuneArgs) -> Result<i32> {
    if a.eta_cycle.is_empty() || a.eta_cycle.iter().any(|&e| e < 2) {
        return Err(usage("--eta-cycle needs values of at least 2"));
    }
    if a.iters == 0 || a.m == 0 {
        return Err(usage("--iters and --m must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.epsilon) {
        return Err(usage(format!("--epsilon must lie in [0, 1], got {}", a.epsilon)));
    }
    let seeds = seed_list(&a.run)?;
    let challenger = match a.subsampler.as_str() {
        "random" => Subsampler::Random,
        _ => Subsampler::Influence { epsilon: a.epsilon },
    };
    let settings = TuneSettings {
        tuner: TunerConfig {
            eta_cycle: a.eta_cycle.clone(),
            max_resource: a.max_resource,
            min_resource: a.min_resource,
            hyperband_iterations: a.iters,
            influence_batch: a.m,
            lambda: a.lambda,
            ..TunerConfig::default()
        },
        evaluator: TreeEnsembleConfig::default(),
        challenger,
        standardize: !a.data.no_standardize,
    };
    let source = load_source(&a.data, &seeds)?;
    let config = json!({ "data": source.config, "tune": settings });
    let mut manifest = RunManifest::new("tune", config, seeds, Some(source.info.clone()));
    let dir = out_dir(&a.run, "tune")?;
    let results = run_seeds(a.run.jobs, &source.datasets, |s, d| tune_seed(d, s, &settings))?;
    let (runs, failed) = partition(&dir, &manifest.id, results)?;

    let label = challenger.label();
    for r in &runs {
        for (name, trace) in [("random", &r.random), ("challenger", &r.challenger)] {
            let path = dir.join("traces").join(format!("{name}_seed{}.csv", r.seed));
            write_tagged(&path, &manifest.id, |buf| trace.write_csv(buf))?;
        }
    }
    if !runs.is_empty() {
        write_tagged(&dir.join("ranks.csv"), &manifest.id, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["seed", "hyperband_iter", "eta", "challenger_score", "random_score", "challenger_rank", "configs_paired"])?;
            for r in &runs {
                for ((c, b), rank) in r.challenger.incumbents.iter().zip(&r.random.incumbents).zip(&r.challenger_ranks) {
                    w.write_record([
                        r.seed.to_string(),
                        c.hyperband_iter.to_string(),
                        c.eta.to_string(),
                        c.score.to_string(),
                        b.score.to_string(),
                        rank.to_string(),
                        r.configs_paired.to_string(),
                    ])?;
                }
            }
            w.flush()?;
            Ok(())
        })?;
        let curve = |t: &infsel::tuner::TunerTrace| t.incumbents.iter().map(|i| (i.hyperband_iter, i.score)).collect::<Vec<_>>();
        let ranks: Vec<Vec<(usize, f64)>> = runs
            .iter()
            .map(|r| r.challenger_ranks.iter().copied().enumerate().collect())
            .collect();
        let mut rows = summarize(&label, &runs.iter().map(|r| curve(&r.challenger)).collect::<Vec<_>>());
        rows.extend(summarize("random", &runs.iter().map(|r| curve(&r.random)).collect::<Vec<_>>()));
        rows.extend(summarize(&format!("{label}_rank"), &ranks));
        write_summary(&dir, &manifest.id, &rows)?;
    }
    write_manifest(&dir, &mut manifest)?;
    if runs.iter().any(|r| !r.configs_paired) {
        eprintln!("warning: arms did not see identical configurations");
    }
    let all: Vec<f64> = runs.iter().flat_map(|r| r.challenger_ranks.iter().copied()).collect();
    if !all.is_empty() {
        println!("tune: mean {label} rank {:.4}", all.iter().sum::<f64>() / all.len() as f64);
    }
    println!("tune: {} seeds ok, {} failed; output in {}", runs.len(), failed.len(), dir.display());
    Ok(exit_code(runs.len(), failed.len()))
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let opts = VerifyOptions {
        quick: a.quick,
        seed: a.seed,
    };
    let reports: Vec<PropertyReport> = run_properties(&a.only, &opts)?;
    let config = json!({ "only": a.only, "quick": a.quick, "seed": a.seed });
    let mut manifest = RunManifest::new("verify", config, vec![a.seed], None);
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("runs").join("verify"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let all_passed = reports.iter().all(|r| r.passed);
    let doc = json!({ "manifest": manifest.id, "all_passed": all_passed, "properties": reports });
    fs::write(dir.join("properties.json"), serde_json::to_string_pretty(&doc)?)?;
    write_manifest(&dir, &mut manifest)?;
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if all_passed {
        Ok(EXIT_OK)
    } else {
        let failing: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        eprintln!("failing properties: {}", failing.join(", "));
        Ok(EXIT_FAILURE)
    }
}
