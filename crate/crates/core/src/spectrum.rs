//! Singular-spectrum summaries: numerical rank, effective rank and
//! log-decade histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svd::svd_values;
use crate::tensor::Tensor;

/// Count of values strictly above `rel_tol · σ_max`; 0 for an all-zero
/// spectrum.
pub fn numerical_rank(values: &[f64], rel_tol: f64) -> usize {
    let top = values.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rel_tol * top).count()
}

/// `exp(H)` where `H` is the Shannon entropy (natural log) of `σᵢ² / Σσ²`.
pub fn effective_rank(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().map(|s| s * s).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let entropy: f64 = values
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy.exp().clamp(1.0, values.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`.
    pub counts: Vec<usize>,
    /// Values below `edges[0]`.
    pub underflow: usize,
    /// Values at or above the last edge.
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.underflow + self.overflow + self.counts.iter().sum::<usize>()
    }
}

pub fn spectrum_histogram(values: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2
        || edges.iter().any(|e| !e.is_finite())
        || edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::UnsortedEdges);
    }
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < edges[0] {
            h.underflow += 1;
        } else if v >= edges[edges.len() - 1] {
            h.overflow += 1;
        } else {
            // number of edges ≤ v, minus one, is the bin index
            let bin = edges.partition_point(|&e| e <= v) - 1;
            h.counts[bin] += 1;
        }
    }
    Ok(h)
}

/// Decade edges `10⁻⁸·σ, 10⁻⁷·σ, …, σ, 10·σ`, so the top bin `[σ, 10σ)`
/// holds the largest value itself. A zero `sigma_max` uses `σ = 1`.
pub fn default_edges(sigma_max: f64) -> Vec<f64> {
    let base = if sigma_max > 0.0 { sigma_max } else { 1.0 };
    (-8..=1).map(|p| base * 10f64.powi(p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub shape: (usize, usize),
    pub singular_values: Vec<f64>,
    pub histogram: Histogram,
    pub rel_tol: f64,
    pub numerical_rank: usize,
    /// `None` for the zero matrix.
    pub effective_rank: Option<f64>,
}

pub fn spectrum_report(matrix: &Tensor, rel_tol: f64, edges: Option<&[f64]>) -> Result<SpectrumReport> {
    let values = svd_values(matrix)?;
    let edges = match edges {
        Some(e) => e.to_vec(),
        None => default_edges(values.first().copied().unwrap_or(0.0)),
    };
    Ok(SpectrumReport {
        shape: (matrix.rows(), matrix.cols()),
        histogram: spectrum_histogram(&values, &edges)?,
        numerical_rank: numerical_rank(&values, rel_tol),
        effective_rank: effective_rank(&values).ok(),
        rel_tol,
        singular_values: values,
    })
}

/// Spectra of three updates trained on the same objective: low-rank linear,
/// low-rank mapped, and unconstrained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumComparison {
    pub adapter_rank: usize,
    pub lora: SpectrumReport,
    pub loran: SpectrumReport,
    pub full: SpectrumReport,
    pub summary: Vec<String>,
}

impl SpectrumComparison {
    pub fn lora_within_rank(&self) -> bool {
        self.lora.numerical_rank <= self.adapter_rank
    }
}

/// Histograms share one set of edges (from the largest σ across the three
/// unless `edges` is given).
pub fn compare_spectra(
    lora: &Tensor,
    loran: &Tensor,
    full: &Tensor,
    adapter_rank: usize,
    rel_tol: f64,
    edges: Option<&[f64]>,
) -> Result<SpectrumComparison> {
    for other in [loran, full] {
        if other.shape() != lora.shape() {
            return Err(Error::shape("compare_spectra", lora.shape(), other.shape()));
        }
    }
    let tops = [lora, loran, full]
        .iter()
        .map(|m| svd_values(m).map(|v| v.first().copied().unwrap_or(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let shared = match edges {
        Some(e) => e.to_vec(),
        None => default_edges(tops.iter().copied().fold(0.0, f64::max)),
    };
    let lora = spectrum_report(lora, rel_tol, Some(&shared))?;
    let loran = spectrum_report(loran, rel_tol, Some(&shared))?;
    let full = spectrum_report(full, rel_tol, Some(&shared))?;

    let line = |name: &str, r: &SpectrumReport| {
        format!(
            "{name}: numerical rank {} (rel_tol {:e}), effective rank {}",
            r.numerical_rank,
            r.rel_tol,
            r.effective_rank
                .map_or_else(|| "undefined".to_string(), |e| format!("{e:.4}"))
        )
    };
    let mut summary = vec![line("full", &full), line("lora", &lora), line("loran", &loran)];
    summary.push(format!(
        "lora rank within r={adapter_rank}: {}; loran rank above r: {}; full rank at least loran rank: {}",
        lora.numerical_rank <= adapter_rank,
        loran.numerical_rank > adapter_rank,
        full.numerical_rank >= loran.numerical_rank,
    ));
    Ok(SpectrumComparison {
        adapter_rank,
        lora,
        loran,
        full,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_zero_is_zero() {
        assert_eq!(numerical_rank(&[0.0, 0.0], 1e-10), 0);
        assert_eq!(numerical_rank(&[], 1e-10), 0);
        assert_eq!(numerical_rank(&[2.0, 1e-11, 0.0], 1e-10), 1);
    }

    #[test]
    fn effective_rank_reference_values() {
        assert!((effective_rank(&[3.0; 7]).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(effective_rank(&[5.0, 0.0, 0.0]).unwrap(), 1.0);
        // p = (0.8, 0.2): exp(0.50040242353818788) at 40 digits
        let e = effective_rank(&[2.0, 1.0]).unwrap();
        assert!((e - 1.649_384_888_466_117_8).abs() < 1e-14, "{e}");
        assert!(matches!(effective_rank(&[0.0, 0.0]), Err(Error::ZeroSpectrum)));
    }

    #[test]
    fn histogram_bins_are_right_open() {
        let h = spectrum_histogram(&[0.5, 1.0, 1.5, 2.0, 3.0, 10.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h.underflow, 1);
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.overflow, 2);
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn histogram_rejects_bad_edges() {
        assert!(matches!(
            spectrum_histogram(&[1.0], &[1.0, 1.0]),
            Err(Error::UnsortedEdges)
        ));
        assert!(spectrum_histogram(&[1.0], &[2.0, 1.0]).is_err());
        assert!(spectrum_histogram(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn default_edges_hold_the_top_value() {
        let values = [4.0, 1.0, 1e-3, 1e-12, 0.0];
        let h = spectrum_histogram(&values, &default_edges(4.0)).unwrap();
        assert_eq!(h.overflow, 0);
        assert_eq!(*h.counts.last().unwrap(), 1);
        assert_eq!(h.underflow, 2);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn report_of_identity() {
        let r = spectrum_report(&Tensor::eye(5), 1e-10, None).unwrap();
        assert_eq!(r.numerical_rank, 5);
        assert!((r.effective_rank.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(r.histogram.total(), 5);
        let z = spectrum_report(&Tensor::zeros(3, 4), 1e-10, None).unwrap();
        assert_eq!(z.numerical_rank, 0);
        assert_eq!(z.effective_rank, None);
    }

    #[test]
    fn compare_rejects_mismatched_shapes() {
        let a = Tensor::eye(3);
        let b = Tensor::zeros(3, 4);
        assert!(compare_spectra(&a, &a, &b, 1, 1e-10, None).is_err());
    }
}
