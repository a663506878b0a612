//! Seed sweeps, aggregation, and deterministic output trees.
//!
//! A sweep trains `num_seeds` independent runs whose seeds derive from the
//! root seed through the documented SplitMix64 mixer, so extending a sweep
//! never perturbs existing runs. Workers fan out over a thread pool
//! (`SBA_LAB_THREADS` overrides the size) and aggregation folds the
//! results in seed order, making output bytes independent of parallelism.

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use rayon::prelude::*;
use sba_core::learner::{train_best_response, TrainConfig, TrainingCurve};
use sba_core::lever::{lever_symmetry_group, make_env, LeverGame};
use sba_core::population::{serialize_population, Population, PolicySpec};
use sba_core::rng::{child_seed, tags};
use serde::Serialize;
use std::path::Path;

/// Mean and standard error of the mean per epoch across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub epoch: usize,
    pub mean_train: f64,
    pub sem_train: f64,
    pub mean_eval: f64,
    pub sem_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCurve {
    pub num_seeds: usize,
    pub rows: Vec<AggregateRow>,
}

/// SEM with the n-1 denominator, zero for a single seed.
fn sem(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

pub fn aggregate(curves: &[TrainingCurve]) -> CliResult<AggregateCurve> {
    let first = curves
        .first()
        .ok_or_else(|| CliError::Runtime("no curves to aggregate".to_string()))?;
    let epochs = first.records.len();
    if curves.iter().any(|c| c.records.len() != epochs) {
        return Err(CliError::Runtime("curves have mismatched epoch counts".to_string()));
    }
    let mut rows = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let train: Vec<f64> = curves.iter().map(|c| c.records[e].train_return).collect();
        let eval: Vec<f64> = curves.iter().map(|c| c.records[e].eval_return).collect();
        rows.push(AggregateRow {
            epoch: first.records[e].epoch,
            mean_train: train.iter().sum::<f64>() / train.len() as f64,
            sem_train: sem(&train),
            mean_eval: eval.iter().sum::<f64>() / eval.len() as f64,
            sem_eval: sem(&eval),
        });
    }
    Ok(AggregateCurve {
        num_seeds: curves.len(),
        rows,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub aggregate: AggregateCurve,
    pub curves: Vec<TrainingCurve>,
    pub policies: Vec<PolicySpec>,
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("SBA_LAB_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            CliError::Validation(format!("SBA_LAB_THREADS must be a positive integer, got '{raw}'"))
        })?;
        if n == 0 {
            return Err(CliError::Validation(
                "SBA_LAB_THREADS must be a positive integer".to_string(),
            ));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot build worker pool: {e}")))
}

/// Train `num_seeds` independent runs and aggregate their curves.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> CliResult<ExperimentOutcome> {
    config.validate()?;
    let env: LeverGame = make_env(config.env).map_err(CliError::validation)?;
    let train_pop: Population = config.train_pop.resolve("train", &config.env, base_dir)?;
    let eval_pop: Population = config.eval_pop.resolve("eval", &config.env, base_dir)?;
    let group = lever_symmetry_group(&config.env);

    let seeds: Vec<u64> = (0..config.num_seeds)
        .map(|i| child_seed(config.root_seed, tags::SEED_SWEEP, i as u64))
        .collect();

    let pool = thread_pool()?;
    let results: Vec<sba_core::Result<(TrainingCurve, PolicySpec)>> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(index, &seed)| {
                let cfg = TrainConfig {
                    seed,
                    sba_enabled: config.sba,
                    augment_eval: config.augment_eval,
                    ..config.train.clone()
                };
                let outcome = train_best_response(&env, &train_pop, Some(&group), &cfg, &eval_pop)?;
                let mut policy = outcome.policy;
                policy.name = format!("run-{index:03}");
                Ok((outcome.curve, policy))
            })
            .collect()
    });

    let mut curves = Vec::with_capacity(results.len());
    let mut policies = Vec::with_capacity(results.len());
    for (index, result) in results.into_iter().enumerate() {
        let (curve, policy) = result.map_err(|e| {
            CliError::Runtime(format!("run {index} (seed {}) failed: {e}", seeds[index]))
        })?;
        curves.push(curve);
        policies.push(policy);
    }

    Ok(ExperimentOutcome {
        aggregate: aggregate(&curves)?,
        curves,
        policies,
    })
}

/// Shortest round-trip decimal text; `.` separator, locale independent.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn curve_csv(curve: &TrainingCurve) -> String {
    let mut out = String::from("epoch,train_return,eval_return\n");
    for r in &curve.records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            fmt_f64(r.train_return),
            fmt_f64(r.eval_return)
        ));
    }
    out
}

pub fn aggregate_csv(agg: &AggregateCurve) -> String {
    let mut out = String::from("epoch,mean_train,sem_train,mean_eval,sem_eval\n");
    for r in &agg.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            fmt_f64(r.mean_train),
            fmt_f64(r.sem_train),
            fmt_f64(r.mean_eval),
            fmt_f64(r.sem_eval)
        ));
    }
    out
}

/// Write one sweep's outputs: config echo, per-seed curve CSVs, the
/// aggregate CSV, and the trained policies.
pub fn write_experiment(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    dir: &Path,
) -> CliResult<()> {
    write_file(&dir.join("config.json"), &config.to_canonical_json())?;
    for (index, curve) in outcome.curves.iter().enumerate() {
        write_file(
            &dir.join("seeds").join(format!("seed_{index:03}.csv")),
            &curve_csv(curve),
        )?;
    }
    write_file(&dir.join("aggregate.csv"), &aggregate_csv(&outcome.aggregate))?;
    let pop = Population::new("trained", outcome.policies.clone()).map_err(CliError::runtime)?;
    write_file(&dir.join("trained_policies.json"), &serialize_population(&pop))?;
    Ok(())
}

/// Plot-data CSV: `epoch,series,mean,sem` with series
/// br_train, br_eval, sba_train, sba_eval per epoch.
pub fn plot_data_csv(br: &AggregateCurve, sba: &AggregateCurve) -> CliResult<String> {
    if br.rows.len() != sba.rows.len() {
        return Err(CliError::Runtime(
            "plot data needs equally long sweeps".to_string(),
        ));
    }
    let mut out = String::from("epoch,series,mean,sem\n");
    for (b, s) in br.rows.iter().zip(&sba.rows) {
        out.push_str(&format!(
            "{},br_train,{},{}\n",
            b.epoch,
            fmt_f64(b.mean_train),
            fmt_f64(b.sem_train)
        ));
        out.push_str(&format!(
            "{},br_eval,{},{}\n",
            b.epoch,
            fmt_f64(b.mean_eval),
            fmt_f64(b.sem_eval)
        ));
        out.push_str(&format!(
            "{},sba_train,{},{}\n",
            s.epoch,
            fmt_f64(s.mean_train),
            fmt_f64(s.sem_train)
        ));
        out.push_str(&format!(
            "{},sba_eval,{},{}\n",
            s.epoch,
            fmt_f64(s.mean_eval),
            fmt_f64(s.sem_eval)
        ));
    }
    Ok(out)
}

/// Write the plot-data CSV for a pair of finished sweeps.
pub fn emit_plot_data(br: &AggregateCurve, sba: &AggregateCurve, path: &Path) -> CliResult<()> {
    write_file(path, &plot_data_csv(br, sba)?)
}
