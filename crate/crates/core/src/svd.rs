//! One-sided Jacobi (Hestenes) singular value decomposition.
//!
//! Columns of the working matrix are rotated pairwise until every pair is
//! orthogonal to within [`SVD_TOLERANCE`] relative to the pair's norms. The
//! column norms are then the singular values.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convergence threshold on `|⟨cᵢ, cⱼ⟩| / (‖cᵢ‖·‖cⱼ‖)`.
pub const SVD_TOLERANCE: f64 = 1e-12;
/// Sweeps attempted before giving up.
pub const MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug)]
pub struct Svd {
    /// `m × p` with orthonormal columns (zero columns for zero singular values).
    pub u: Tensor,
    /// Descending, nonnegative, length `p = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `n × p` with orthonormal columns.
    pub v: Tensor,
}

impl Svd {
    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> Tensor {
        let (m, p) = (self.u.rows(), self.u.cols());
        let mut us = self.u.clone();
        for i in 0..m {
            for j in 0..p {
                us.set(i, j, self.u.get(i, j) * self.singular_values[j]);
            }
        }
        us.matmul(&self.v.transpose()).expect("conformable factors")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn svd(matrix: &Tensor) -> Result<Svd> {
    if matrix.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor("svd input has non-finite entries".into()));
    }
    if matrix.rows() < matrix.cols() {
        let t = svd(&matrix.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }

    let (m, n) = (matrix.rows(), matrix.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| matrix.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let floor = (matrix.frobenius_sq().sqrt() * 1e-150).powi(2);

    let mut converged = false;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        residual = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma = dot(&cols[i], &cols[j]);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                residual = residual.max(off);
                if off <= SVD_TOLERANCE {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if residual <= SVD_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u = Tensor::zeros(m, n);
    let mut v = Tensor::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        if sigma > 0.0 {
            for (i, c) in cols[src].iter().enumerate() {
                u.set(i, dst, c / sigma);
            }
        }
        for (i, c) in vcols[src].iter().enumerate() {
            v.set(i, dst, *c);
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v,
    })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// All `min(d, k)` singular values in descending order.
pub fn svd_values(matrix: &Tensor) -> Result<Vec<f64>> {
    Ok(svd(matrix)?.singular_values)
}
