#![allow(dead_code)]

use miplgp_core::disambiguation::TransformedTargets;
use miplgp_core::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform_mat(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Mat<f64> {
    let mut r = rng(seed);
    Mat::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// Random targets with `σ̇ ∈ [lo, hi]`.
pub fn random_targets(n: usize, w: usize, lo: f64, hi: f64, seed: u64) -> TransformedTargets {
    TransformedTargets {
        y_dot: uniform_mat(n, w, -3.0, 1.0, seed),
        sigma_dot: uniform_mat(n, w, lo, hi, seed ^ 0x5eed),
    }
}

pub fn constant_noise(y: Mat<f64>, noise: f64) -> TransformedTargets {
    let sigma_dot = Mat::from_fn(y.nrows(), y.ncols(), |_, _| noise);
    TransformedTargets { y_dot: y, sigma_dot }
}

/// Textbook Cholesky, returning `None` on a non-positive pivot.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

pub fn to_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
