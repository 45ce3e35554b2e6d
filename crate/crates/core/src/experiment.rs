//! The experiments behind each `loran` subcommand. Each writes JSON reports
//! and flat CSV tables into an output directory and returns a short textual
//! summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adapter::{AdapterKind, DenseUpdate};
use crate::config::{ExperimentConfig, RunConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckReport, GradcheckScope};
use crate::grid::{grid_search, GridResult};
use crate::harness::{execute_with, run_matrix, RunResult};
use crate::spectrum::{compare_spectra, SpectrumComparison, SpectrumReport};
use crate::stats::Welford;
use crate::train::RunReport;

/// Where and how a command runs.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Record wall-clock time and start time in reports.
    pub timestamp: bool,
}

#[derive(Clone, Debug, Default)]
pub struct CommandSummary {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub diverged_runs: usize,
}

struct Sink<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn runs(&mut self, results: &[&RunResult]) -> Result<()> {
        for r in results {
            let name = format!("runs/{}-seed{}.json", file_safe(&r.report.label), r.report.seed);
            self.json(&name, &r.report)?;
        }
        Ok(())
    }
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Aggregate of one configuration across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub runs: usize,
    pub diverged: usize,
    /// Mean final metric over finished runs.
    pub mean: Option<f64>,
    /// Unbiased variance; needs two finished runs.
    pub variance: Option<f64>,
    pub mean_train_loss: Option<f64>,
    pub trainable_parameters: usize,
}

pub fn group_stats(label: &str, reports: &[&RunReport]) -> GroupStats {
    let finished: Welford = reports.iter().filter_map(|r| r.final_metric).collect();
    let losses: Welford = reports.iter().filter_map(|r| r.mean_loss()).collect();
    GroupStats {
        label: label.to_string(),
        runs: reports.len(),
        diverged: reports.iter().filter(|r| r.diverged()).count(),
        mean: (finished.count() > 0).then(|| finished.mean()),
        variance: finished.sample_variance(),
        mean_train_loss: (losses.count() > 0).then(|| losses.mean()),
        trainable_parameters: reports.first().map_or(0, |r| r.trainable_parameters),
    }
}

const RUN_HEADER: [&str; 9] = [
    "label",
    "kind",
    "activation",
    "rank",
    "seed",
    "final_metric",
    "diverged_at_epoch",
    "mean_train_loss",
    "trainable_parameters",
];

fn run_row(r: &RunReport) -> Vec<String> {
    let a = &r.config.adapter;
    let activation = match a.kind {
        AdapterKind::Lora => "none".to_string(),
        AdapterKind::Loran => a.activation.to_string(),
    };
    vec![
        r.label.clone(),
        format!("{:?}", a.kind).to_lowercase(),
        activation,
        a.rank.to_string(),
        r.seed.to_string(),
        num(r.final_metric),
        r.diverged_at_epoch.map(|e| e.to_string()).unwrap_or_default(),
        num(r.mean_loss()),
        r.trainable_parameters.to_string(),
    ]
}

const STATS_HEADER: [&str; 7] = [
    "label",
    "runs",
    "diverged",
    "mean_metric",
    "variance",
    "mean_train_loss",
    "trainable_parameters",
];

fn stats_row(s: &GroupStats) -> Vec<String> {
    vec![
        s.label.clone(),
        s.runs.to_string(),
        s.diverged.to_string(),
        num(s.mean),
        num(s.variance),
        num(s.mean_train_loss),
        s.trainable_parameters.to_string(),
    ]
}

fn stats_line(s: &GroupStats) -> String {
    format!(
        "{}: mean {} variance {} over {} runs ({} diverged), mean train loss {}",
        s.label,
        s.mean.map_or("n/a".into(), |v| format!("{v:.6}")),
        s.variance.map_or("n/a".into(), |v| format!("{v:.3e}")),
        s.runs,
        s.diverged,
        s.mean_train_loss.map_or("n/a".into(), |v| format!("{v:.6}")),
    )
}

fn prepare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    if opts.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if opts.jobs == 0 {
        return Err(Error::Config("--jobs must be ≥ 1".into()));
    }
    Ok(())
}

/// Runs a list of configurations over all seeds, writes every run report,
/// `runs.csv` and `<table>.csv`, and returns per-configuration stats.
fn matrix_table(
    sink: &mut Sink,
    configs: &[RunConfig],
    opts: &RunOptions,
    table: &str,
) -> Result<(Vec<Vec<RunResult>>, Vec<GroupStats>, usize)> {
    let rows = run_matrix(configs, &opts.seeds, opts.jobs, opts.timestamp)?;
    let all: Vec<&RunResult> = rows.iter().flatten().collect();
    sink.runs(&all)?;
    let run_rows: Vec<Vec<String>> = all.iter().map(|r| run_row(&r.report)).collect();
    sink.csv("runs.csv", &RUN_HEADER, &run_rows)?;
    let stats: Vec<GroupStats> = rows
        .iter()
        .zip(configs)
        .map(|(row, c)| {
            let reports: Vec<&RunReport> = row.iter().map(|r| &r.report).collect();
            group_stats(&c.adapter.label(), &reports)
        })
        .collect();
    sink.csv(
        &format!("{table}.csv"),
        &STATS_HEADER,
        &stats.iter().map(stats_row).collect::<Vec<_>>(),
    )?;
    let diverged = all.iter().filter(|r| r.report.diverged()).count();
    Ok((rows, stats, diverged))
}

fn finish(sink: Sink, lines: Vec<String>, diverged_runs: usize) -> CommandSummary {
    CommandSummary {
        lines,
        files: sink.files,
        diverged_runs,
    }
}

/// The configured adapter over every seed.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let (_, stats, diverged) = matrix_table(&mut sink, &[cfg.run_config()], opts, "summary")?;
    sink.json("summary.json", &stats)?;
    let lines = stats.iter().map(stats_line).collect();
    Ok(finish(sink, lines, diverged))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: crate::train::MetricKind,
    pub baseline: GroupStats,
    pub candidate: GroupStats,
    /// `candidate − baseline` of the mean final metric.
    pub delta_metric: Option<f64>,
    /// `candidate − baseline` of the mean training loss.
    pub delta_train_loss: Option<f64>,
}

/// Plain LoRA against the configured adapter at the same rank and alpha.
pub fn cmd_compare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let run = cfg.run_config();
    let configs = [run.with_adapter(run.adapter.lora_baseline()), run];
    let (rows, stats, diverged) = matrix_table(&mut sink, &configs, opts, "compare")?;
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(c, b)| c - b);
    let cmp = Comparison {
        metric: rows[0][0].report.metric,
        delta_metric: diff(stats[1].mean, stats[0].mean),
        delta_train_loss: diff(stats[1].mean_train_loss, stats[0].mean_train_loss),
        baseline: stats[0].clone(),
        candidate: stats[1].clone(),
    };
    sink.json("compare.json", &cmp)?;
    let mut lines: Vec<String> = stats.iter().map(stats_line).collect();
    lines.push(format!(
        "delta ({} minus {}): metric {}, train loss {}",
        cmp.candidate.label,
        cmp.baseline.label,
        cmp.delta_metric.map_or("n/a".into(), |v| format!("{v:+.6}")),
        cmp.delta_train_loss.map_or("n/a".into(), |v| format!("{v:+.6}")),
    ));
    Ok(finish(sink, lines, diverged))
}

/// The configured adapter with each activation of the ablation list.
pub fn cmd_ablate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let run = cfg.run_config();
    let configs: Vec<RunConfig> = cfg
        .ablation
        .activations
        .iter()
        .map(|&activation| {
            let mut c = run.clone();
            c.adapter.kind = AdapterKind::Loran;
            c.adapter.activation = activation;
            c
        })
        .collect();
    let (_, stats, diverged) = matrix_table(&mut sink, &configs, opts, "ablation")?;
    sink.json("ablation.json", &stats)?;
    let lines = stats.iter().map(stats_line).collect();
    Ok(finish(sink, lines, diverged))
}

/// Sinter amplitude × frequency sweep of the configured run.
pub fn cmd_grid(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let (grid, runs) = grid_search(
        &cfg.grid.amplitudes,
        &cfg.grid.omegas,
        &cfg.run_config(),
        &opts.seeds,
        opts.jobs,
        opts.timestamp,
    )?;
    sink.runs(&runs.iter().collect::<Vec<_>>())?;
    sink.json("grid.json", &grid)?;
    write_grid_csv(&mut sink, &grid)?;
    let diverged = runs.iter().filter(|r| r.report.diverged()).count();
    let mut lines = Vec::new();
    for row in &grid.cells {
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.mean.map_or("diverged".into(), |m| format!("{m:.6}")))
            .collect();
        lines.push(format!("A={:e}: {}", row[0].amplitude, cells.join("  ")));
    }
    lines.push(match grid.best {
        Some((i, j)) => format!(
            "best: A={:e} omega={:e}",
            grid.amplitudes[i], grid.omegas[j]
        ),
        None => "best: none (every cell diverged)".into(),
    });
    Ok(finish(sink, lines, diverged))
}

fn write_grid_csv(sink: &mut Sink, grid: &GridResult) -> Result<()> {
    let mut long = Vec::new();
    let mut means = Vec::new();
    for row in &grid.cells {
        for cell in row {
            for (seed, v) in grid.seeds.iter().zip(&cell.per_seed) {
                long.push(vec![
                    cell.amplitude.to_string(),
                    cell.omega.to_string(),
                    seed.to_string(),
                    num(*v),
                ]);
            }
            means.push(vec![
                cell.amplitude.to_string(),
                cell.omega.to_string(),
                cell.per_seed.len().to_string(),
                num(cell.mean),
            ]);
        }
    }
    sink.csv("grid_runs.csv", &["amplitude", "omega", "seed", "final_metric"], &long)?;
    sink.csv("grid.csv", &["amplitude", "omega", "seeds", "mean_metric"], &means)
}

/// Singular spectra of LoRA, the configured LoRAN and an unconstrained
/// update, all trained on the configured task with the first seed.
pub fn cmd_spectrum(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let run = cfg.run_config().with_seed(opts.seeds[0]);
    let mut loran_cfg = run.clone();
    if loran_cfg.adapter.kind == AdapterKind::Lora {
        loran_cfg.adapter.kind = AdapterKind::Loran;
        loran_cfg.adapter.activation = Activation::default();
    }
    let lora_cfg = run.with_adapter(run.adapter.lora_baseline());
    let configs = [lora_cfg, loran_cfg];
    let mut results = crate::harness::parallel_map(&configs, opts.jobs.min(2), |c| {
        crate::harness::execute_run(c, opts.timestamp)
    })?;
    let (d, k) = run.adapted_dims();
    let mut dense = DenseUpdate::zeros(d, k);
    results.push(execute_with(&run, "full", &mut dense, opts.timestamp)?);
    sink.runs(&results.iter().collect::<Vec<_>>())?;

    let cmp = compare_spectra(
        &results[0].delta,
        &results[1].delta,
        &results[2].delta,
        run.adapter.rank,
        cfg.spectrum.rel_tol,
        cfg.spectrum.edges.as_deref(),
    )?;
    sink.json("spectrum.json", &cmp)?;
    write_spectrum_csv(&mut sink, &cmp)?;
    let diverged = results.iter().filter(|r| r.report.diverged()).count();
    Ok(finish(sink, cmp.summary.clone(), diverged))
}

fn write_spectrum_csv(sink: &mut Sink, cmp: &SpectrumComparison) -> Result<()> {
    let named: [(&str, &SpectrumReport); 3] =
        [("full", &cmp.full), ("lora", &cmp.lora), ("loran", &cmp.loran)];
    let mut values = Vec::new();
    let mut bins = Vec::new();
    for (name, r) in named {
        for (i, s) in r.singular_values.iter().enumerate() {
            values.push(vec![name.to_string(), i.to_string(), s.to_string()]);
        }
        let h = &r.histogram;
        bins.push(vec![
            name.to_string(),
            String::new(),
            h.edges[0].to_string(),
            h.underflow.to_string(),
        ]);
        for (i, c) in h.counts.iter().enumerate() {
            bins.push(vec![
                name.to_string(),
                h.edges[i].to_string(),
                h.edges[i + 1].to_string(),
                c.to_string(),
            ]);
        }
        bins.push(vec![
            name.to_string(),
            h.edges[h.edges.len() - 1].to_string(),
            String::new(),
            h.overflow.to_string(),
        ]);
    }
    sink.csv("spectrum_values.csv", &["model", "index", "singular_value"], &values)?;
    sink.csv("spectrum_histogram.csv", &["model", "lower", "upper", "count"], &bins)
}

/// LoRA and the configured LoRAN paired at each rank of the study.
pub fn cmd_rank_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandSummary> {
    prepare(cfg, opts)?;
    let run = cfg.run_config();
    let (d, k) = run.adapted_dims();
    for &r in &cfg.rank_study.ranks {
        if r == 0 || r > d.min(k) {
            return Err(Error::Config(format!(
                "rank_study rank {r} invalid for the {d}x{k} adapted weight"
            )));
        }
    }
    let mut sink = Sink::new(&opts.out)?;
    sink.json("config.json", cfg)?;
    let mut configs = Vec::new();
    for &rank in &cfg.rank_study.ranks {
        let mut c = run.clone();
        c.adapter.rank = rank;
        configs.push(c.with_adapter(c.adapter.lora_baseline()));
        configs.push(c);
    }
    let (_, stats, diverged) = matrix_table(&mut sink, &configs, opts, "rank_study")?;
    sink.json("rank_study.json", &stats)?;
    let lines = stats.iter().map(stats_line).collect();
    Ok(finish(sink, lines, diverged))
}

/// The finite-difference suite; writes `gradcheck.json` when `out` is given.
pub fn cmd_gradcheck(
    scope: GradcheckScope,
    inject_fault: bool,
    out: Option<&Path>,
) -> Result<(GradcheckReport, CommandSummary)> {
    let report = run_gradcheck(scope, inject_fault)?;
    let mut lines: Vec<String> = report
        .cases
        .iter()
        .map(|c| {
            format!(
                "{} {} (h={:e}, max rel err {:.3e})",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.step,
                c.max_rel_error
            )
        })
        .collect();
    lines.push(format!(
        "max relative error {:.3e} (tolerance {:e}): {}",
        report.max_rel_error,
        report.tolerance,
        if report.passed { "pass" } else { "fail" }
    ));
    let mut files = Vec::new();
    if let Some(dir) = out {
        let mut sink = Sink::new(dir)?;
        sink.json("gradcheck.json", &report)?;
        files = sink.files;
    }
    Ok((
        report,
        CommandSummary {
            lines,
            files,
            diverged_runs: 0,
        },
    ))
}
