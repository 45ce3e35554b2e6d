//! Independent reference computations shared by the integration tests. None
//! of these call into the library's numerical kernels.

#![allow(dead_code)]

/// Eigenvalues of a symmetric `n × n` matrix (row-major) by cyclic Jacobi
/// rotations, sorted descending.
pub fn jacobi_eigenvalues(sym: &[f64], n: usize) -> Vec<f64> {
    let mut a = sym.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values of a row-major `m × n` matrix via the Gram matrix of the
/// smaller side.
pub fn gram_singular_values(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let (p, gram) = if n <= m {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..m).map(|r| data[r * n + i] * data[r * n + j]).sum();
            }
        }
        (n, g)
    } else {
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                g[i * m + j] = (0..n).map(|c| data[i * n + c] * data[j * n + c]).sum();
            }
        }
        (m, g)
    };
    jacobi_eigenvalues(&gram, p)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

pub fn triple_loop_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Unbiased variance by the textbook two-pass formula.
pub fn two_pass_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Squared singular values beyond the first `r`, over `d·k`: the smallest
/// mean squared error any rank-`r` matrix can reach.
pub fn eckart_young_floor(values: &[f64], r: usize, d: usize, k: usize) -> f64 {
    values.iter().skip(r).map(|s| s * s).sum::<f64>() / (d * k) as f64
}

/// Full-batch gradient-descent softmax regression with bias, written with
/// plain loops. Points are the columns of the row-major `dim × n` features.
/// Returns `(weights dim×classes, bias)`.
pub fn fit_softmax_regression(
    features: &[f64],
    dim: usize,
    n: usize,
    labels: &[usize],
    classes: usize,
    lr: f64,
    iters: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; dim * classes];
    let mut b = vec![0.0; classes];
    for _ in 0..iters {
        let mut gw = vec![0.0; dim * classes];
        let mut gb = vec![0.0; classes];
        for p in 0..n {
            let probs = softmax_row(features, dim, n, p, &w, &b, classes);
            for c in 0..classes {
                let g = probs[c] - if labels[p] == c { 1.0 } else { 0.0 };
                gb[c] += g / n as f64;
                for i in 0..dim {
                    gw[i * classes + c] += g * features[i * n + p] / n as f64;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * gi;
        }
        for (bi, gi) in b.iter_mut().zip(&gb) {
            *bi -= lr * gi;
        }
    }
    (w, b)
}

fn softmax_row(
    features: &[f64],
    dim: usize,
    n: usize,
    p: usize,
    w: &[f64],
    b: &[f64],
    classes: usize,
) -> Vec<f64> {
    let z: Vec<f64> = (0..classes)
        .map(|c| b[c] + (0..dim).map(|i| w[i * classes + c] * features[i * n + p]).sum::<f64>())
        .collect();
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax_regression_accuracy(
    features: &[f64],
    dim: usize,
    n: usize,
    labels: &[usize],
    classes: usize,
    w: &[f64],
    b: &[f64],
) -> f64 {
    let correct = (0..n)
        .filter(|&p| {
            let probs = softmax_row(features, dim, n, p, w, b, classes);
            let best = (0..classes).fold(0, |best, c| if probs[c] > probs[best] { c } else { best });
            best == labels[p]
        })
        .count();
    correct as f64 / n as f64
}
