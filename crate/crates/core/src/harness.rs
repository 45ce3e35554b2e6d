//! Builds runs from configuration and executes batches of them.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use crate::adapter::{Adapter, AdapterKind, LoraAdapter, LoranAdapter, WeightUpdate};
use crate::config::{AdapterConfig, RunConfig, TaskConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::task::{gen_blobs, ToyClassifier};
use crate::tensor::Tensor;
use crate::train::{train, Problem, RunReport};

/// Seed stream for adapter initialisation.
pub const INIT_STREAM: u64 = 1;

pub fn build_adapter(cfg: &AdapterConfig, d: usize, k: usize, run_seed: u64) -> Result<Adapter> {
    let inner = LoraAdapter::init(d, k, cfg.rank, cfg.alpha, derive_seed(run_seed, INIT_STREAM))?;
    Ok(match cfg.kind {
        AdapterKind::Lora => Adapter::Lora(inner),
        AdapterKind::Loran => Adapter::Loran(LoranAdapter::new(inner, cfg.activation, cfg.scale_inside)?),
    })
}

/// The materialised inputs of one run.
#[allow(clippy::large_enum_variant)]
pub enum Prepared {
    Classification {
        model: ToyClassifier,
        data: crate::task::Dataset,
    },
    Teacher {
        target: Tensor,
    },
}

impl Prepared {
    pub fn new(run: &RunConfig) -> Result<Self> {
        Ok(match &run.task {
            TaskConfig::Blobs(b) => Prepared::Classification {
                model: ToyClassifier::new(
                    b.dim,
                    run.model.hidden,
                    b.classes,
                    run.model.adapted_layer,
                    run.model.seed,
                ),
                data: gen_blobs(b)?,
            },
            TaskConfig::Teacher(t) => Prepared::Teacher { target: t.target()? },
        })
    }

    pub fn problem(&self) -> Problem<'_> {
        match self {
            Prepared::Classification { model, data } => Problem::Classification { model, data },
            Prepared::Teacher { target } => Problem::Teacher { target },
        }
    }

    /// Fingerprint of everything the run must not modify.
    pub fn frozen_fingerprint(&self) -> String {
        match self {
            Prepared::Classification { model, .. } => model.fingerprint(),
            Prepared::Teacher { target } => target.fingerprint(),
        }
    }

    pub fn adapted_dims(&self) -> (usize, usize) {
        match self {
            Prepared::Classification { model, .. } => model.adapted_dims(),
            Prepared::Teacher { target } => (target.rows(), target.cols()),
        }
    }
}

/// A finished run together with its trained update.
pub struct RunResult {
    pub report: RunReport,
    pub delta: Tensor,
}

/// Trains an arbitrary update on the run's task and reports it.
pub fn execute_with(
    run: &RunConfig,
    label: &str,
    update: &mut dyn WeightUpdate,
    timestamp: bool,
) -> Result<RunResult> {
    let prepared = Prepared::new(run)?;
    if update.dims() != prepared.adapted_dims() {
        let (d, k) = prepared.adapted_dims();
        let (ud, uk) = update.dims();
        return Err(Error::shape("update vs adapted layer", &[ud, uk], &[d, k]));
    }
    let started_at = timestamp.then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let clock = Instant::now();
    let before = prepared.frozen_fingerprint();
    let outcome = train(&prepared.problem(), update, &run.train)?;
    let after = prepared.frozen_fingerprint();
    assert_eq!(before, after, "frozen weights changed during training");
    let delta = update.delta_weight()?;
    let report = RunReport {
        label: label.to_string(),
        seed: run.train.seed,
        config: run.clone(),
        metric: prepared.problem().metric_kind(),
        epoch_losses: outcome.epoch_losses,
        evals: outcome.evals,
        final_metric: outcome.final_metric,
        diverged_at_epoch: outcome.diverged_at_epoch,
        trainable_parameters: update.parameter_count(),
        frozen_fingerprint: after,
        delta_fingerprint: delta.fingerprint(),
        wall_clock_seconds: timestamp.then(|| clock.elapsed().as_secs_f64()),
        started_at,
    };
    Ok(RunResult { report, delta })
}

/// Builds the configured adapter and trains it.
pub fn execute_run(run: &RunConfig, timestamp: bool) -> Result<RunResult> {
    run.validate()?;
    let (d, k) = match &run.task {
        TaskConfig::Teacher(t) => (t.d, t.k),
        TaskConfig::Blobs(_) => run.adapted_dims(),
    };
    let mut adapter = build_adapter(&run.adapter, d, k, run.train.seed)?;
    execute_with(run, &run.adapter.label(), &mut adapter, timestamp)
}

/// Every `(config, seed)` pair, results ordered by config index then seed
/// index. `jobs` caps the worker threads; results do not depend on it.
pub fn run_matrix(
    configs: &[RunConfig],
    seeds: &[u64],
    jobs: usize,
    timestamp: bool,
) -> Result<Vec<Vec<RunResult>>> {
    let work: Vec<RunConfig> = configs
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| c.with_seed(s)))
        .collect();
    let results = parallel_map(&work, jobs, |run| execute_run(run, timestamp))?;
    let mut rows: Vec<Vec<RunResult>> = Vec::with_capacity(configs.len());
    let mut it = results.into_iter();
    for _ in configs {
        rows.push(it.by_ref().take(seeds.len()).collect());
    }
    Ok(rows)
}

/// Order-preserving map over `items` on at most `jobs` threads.
pub fn parallel_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, TrainConfig};
    use crate::task::TeacherTask;

    fn teacher_run() -> RunConfig {
        let mut cfg = ExperimentConfig {
            task: TaskConfig::Teacher(TeacherTask { d: 8, k: 8, rank: 4, seed: 0 }),
            ..ExperimentConfig::default()
        };
        cfg.adapter.rank = 2;
        cfg.train = TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: None,
            ..TrainConfig::default()
        };
        cfg.run_config()
    }

    #[test]
    fn reports_are_deterministic_without_timestamp() {
        let run = teacher_run();
        let a = execute_run(&run, false).unwrap().report;
        let b = execute_run(&run, false).unwrap().report;
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
        assert_eq!(a.epoch_losses.len(), 20);
        let back: RunReport = serde_json::from_str(&a.to_json_pretty()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn timestamp_fields_are_optional() {
        let r = execute_run(&teacher_run(), true).unwrap().report;
        assert!(r.wall_clock_seconds.is_some() && r.started_at.is_some());
        let back: RunReport = serde_json::from_str(&r.to_json_pretty()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn matrix_order_and_jobs_invariance() {
        let base = teacher_run();
        let lora = base.with_adapter(base.adapter.lora_baseline());
        let configs = vec![base, lora];
        let seeds = [3, 1, 2];
        let serial = run_matrix(&configs, &seeds, 1, false).unwrap();
        let parallel = run_matrix(&configs, &seeds, 4, false).unwrap();
        for (row_s, row_p) in serial.iter().zip(&parallel) {
            for ((a, b), seed) in row_s.iter().zip(row_p).zip(seeds) {
                assert_eq!(a.report, b.report);
                assert_eq!(a.report.seed, seed);
            }
        }
        assert_eq!(serial[1][0].report.label, "lora-r2");
    }
}
