//! Exhaustive search over the Sinter amplitude and frequency.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::adapter::AdapterKind;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{execute_run, parallel_map, RunResult};
use crate::stats::Welford;
use crate::train::MetricKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub amplitude: f64,
    pub omega: f64,
    /// Final metric per seed, in seed order; `None` for a diverged run.
    pub per_seed: Vec<Option<f64>>,
    /// Mean over seeds; `None` if any seed diverged.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub amplitudes: Vec<f64>,
    pub omegas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub metric: MetricKind,
    /// `cells[i][j]` is `(amplitudes[i], omegas[j])`.
    pub cells: Vec<Vec<GridCell>>,
    /// Best finished cell as `(amplitude index, omega index)`; ties go to
    /// the smaller amplitude index, then the smaller omega index.
    pub best: Option<(usize, usize)>,
}

impl GridResult {
    pub fn mean_matrix(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|c| c.mean).collect())
            .collect()
    }
}

/// The run configuration of one grid cell: LoRAN with `Sinter(amplitude,
/// omega)` and everything else from `base`.
pub fn cell_config(base: &RunConfig, amplitude: f64, omega: f64) -> RunConfig {
    let mut run = base.clone();
    run.adapter.kind = AdapterKind::Loran;
    run.adapter.activation = Activation::Sinter { amplitude, omega };
    run
}

/// Trains every `(A, ω, seed)` combination, in parallel over at most `jobs`
/// threads. The result does not depend on `jobs`. Each returned run is in
/// `(A index, ω index, seed index)` order.
pub fn grid_search(
    amplitudes: &[f64],
    omegas: &[f64],
    base: &RunConfig,
    seeds: &[u64],
    jobs: usize,
    timestamp: bool,
) -> Result<(GridResult, Vec<RunResult>)> {
    if amplitudes.is_empty() || omegas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("grid needs amplitudes, omegas and seeds".into()));
    }
    let mut work = Vec::with_capacity(amplitudes.len() * omegas.len() * seeds.len());
    for &a in amplitudes {
        for &w in omegas {
            let cell = cell_config(base, a, w);
            cell.validate()?;
            work.extend(seeds.iter().map(|&s| cell.with_seed(s)));
        }
    }
    let runs = parallel_map(&work, jobs, |run| execute_run(run, timestamp))?;
    let metric = runs[0].report.metric;

    let mut cells = Vec::with_capacity(amplitudes.len());
    let mut chunks = runs.chunks(seeds.len());
    for &amplitude in amplitudes {
        let mut row = Vec::with_capacity(omegas.len());
        for &omega in omegas {
            let per_seed: Vec<Option<f64>> = chunks
                .next()
                .expect("one chunk per cell")
                .iter()
                .map(|r| r.report.final_metric)
                .collect();
            let mean = per_seed
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.into_iter().collect::<Welford>().mean());
            row.push(GridCell {
                amplitude,
                omega,
                per_seed,
                mean,
            });
        }
        cells.push(row);
    }

    let mut best: Option<(usize, usize, f64)> = None;
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(m) = cell.mean {
                if best.is_none_or(|(_, _, b)| metric.better(m, b)) {
                    best = Some((i, j, m));
                }
            }
        }
    }
    Ok((
        GridResult {
            amplitudes: amplitudes.to_vec(),
            omegas: omegas.to_vec(),
            seeds: seeds.to_vec(),
            metric,
            cells,
            best: best.map(|(i, j, _)| (i, j)),
        },
        runs,
    ))
}
