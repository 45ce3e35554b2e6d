//! Cross-seed variance of final metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::RunReport;

/// Running mean and sum of squared deviations (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; `None` below two samples.
    pub fn sample_variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        for x in iter {
            w.push(x);
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub label: String,
    /// Runs that finished without diverging.
    pub runs: usize,
    pub diverged: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
    pub mean_train_loss: Option<f64>,
}

/// Per-group statistics of the final metric. Each group must hold at least
/// two finished runs.
pub fn variance_report(groups: &[(String, Vec<&RunReport>)]) -> Result<Vec<VarianceRow>> {
    groups
        .iter()
        .map(|(label, reports)| {
            let finished: Welford = reports.iter().filter_map(|r| r.final_metric).collect();
            let variance = finished.sample_variance().ok_or(Error::InsufficientSamples {
                needed: 2,
                got: finished.count(),
            })?;
            let losses: Vec<f64> = reports.iter().filter_map(|r| r.mean_loss()).collect();
            Ok(VarianceRow {
                label: label.clone(),
                runs: finished.count(),
                diverged: reports.len() - finished.count(),
                mean: finished.mean(),
                variance,
                std_dev: variance.sqrt(),
                mean_train_loss: (!losses.is_empty())
                    .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            })
        })
        .collect()
}
