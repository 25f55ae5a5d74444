mod common;

use common::*;
use miplgp_core::cg::{pivoted_cholesky, CgOptions, WoodburyPreconditioner};
use miplgp_core::kernel::gram;
use miplgp_core::{GpModel, KernelParams, Mat, Smoothness};

fn params(lengthscale: f64, s2: f64) -> KernelParams {
    let mut p = KernelParams::new(Smoothness::FiveHalves);
    p.log_lengthscale = lengthscale.ln();
    p.log_outputscale = s2.ln();
    p
}

fn column(m: &Mat<f64>, c: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, c)]).collect()
}

#[test]
fn two_point_objective_matches_explicit_inverse() {
    let x = uniform_mat(2, 3, -1.0, 1.0, 21);
    let targets = random_targets(2, 3, 0.1, 2.0, 22);
    let p = params(0.9, 1.4);
    let gp = GpModel::fit(x.clone(), targets.clone(), p).unwrap();
    let k = gram(&x, &p);
    for (c, term) in gp.nlml_terms().iter().enumerate() {
        let j = gp.jitter(c);
        let a = k[(0, 0)] + targets.sigma_dot[(0, c)] + j;
        let d = k[(1, 1)] + targets.sigma_dot[(1, c)] + j;
        let b = k[(0, 1)];
        let det = a * d - b * b;
        let (y0, y1) = (targets.y_dot[(0, c)], targets.y_dot[(1, c)]);
        let quad = (d * y0 * y0 - 2.0 * b * y0 * y1 + a * y1 * y1) / det;
        let expected = det.ln() + quad;
        assert!((term - expected).abs() < 1e-10, "block {c}: {term} vs {expected}");
    }
}

fn fd_check(n: usize, w: usize, seed: u64) {
    let x = uniform_mat(n, 3, -1.5, 1.5, seed);
    let targets = random_targets(n, w, 0.1, 2.0, seed + 1);
    let p = params(0.7, 1.3);
    let gp = GpModel::fit(x.clone(), targets.clone(), p).unwrap();
    let grad = gp.nlml_grad();
    let h = 1e-5;
    for (g, which) in grad.iter().zip(p.trainable()) {
        let (mut up, mut dn) = (p, p);
        up.set(which, p.get(which) + h);
        dn.set(which, p.get(which) - h);
        let f = |q| GpModel::fit(x.clone(), targets.clone(), q).unwrap().nlml();
        let fd = (f(up) - f(dn)) / (2.0 * h);
        assert!(rel_err(*g, fd) < 1e-4, "{which:?}: analytic {g} vs fd {fd}");
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    fd_check(20, 3, 31);
    fd_check(20, 4, 41);
}

#[test]
fn outputscale_gradient_vanishes_at_its_stationary_point() {
    // Near-noiseless A = s²(K̂ + 1e-6 I): the objective's s² derivative is zero
    // at s²* = Σ_c ẏ_cᵀ (K̂ + 1e-6 I)⁻¹ ẏ_c / (q̃ n).
    let (n, w) = (8, 3);
    let x = uniform_mat(n, 2, 0.0, 4.0, 51);
    let y = uniform_mat(n, w, -2.0, 1.0, 52);
    let mut khat = to_rows(&gram(&x, &params(0.6, 1.0)));
    for (i, row) in khat.iter_mut().enumerate() {
        row[i] += 1e-6;
    }
    let l = cholesky(&khat).unwrap();
    let quad: f64 = (0..w)
        .map(|c| {
            let yc = column(&y, c);
            yc.iter().zip(cholesky_solve(&l, &yc)).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum();
    let s2_star = quad / (w * n) as f64;
    let mut p = params(0.6, s2_star);
    p.train_lengthscale = false;
    let gp = GpModel::fit(x, constant_noise(y, 1e-12), p).unwrap();
    let g = gp.nlml_grad();
    assert_eq!(g.len(), 1);
    assert!(g[0].abs() < 1e-6 * (w * n) as f64, "gradient {} at s2* = {s2_star}", g[0]);
}

#[test]
fn vanishing_noise_interpolates_training_targets() {
    let x = uniform_mat(15, 2, 0.0, 6.0, 61);
    let y = uniform_mat(15, 2, -2.0, 1.0, 62);
    let gp = GpModel::fit(x.clone(), constant_noise(y.clone(), 1e-10), params(0.5, 1.0)).unwrap();
    let mu = gp.posterior_mean_train();
    for i in 0..15 {
        for c in 0..2 {
            assert!((mu[(i, c)] - y[(i, c)]).abs() < 1e-4);
        }
    }
    let pred = gp.predict(&Mat::from_fn(1, 2, |_, k| x[(4, k)])).unwrap();
    assert!((pred.mean[(0, 1)] - y[(4, 1)]).abs() < 1e-3);
}

#[test]
fn constant_targets_are_reproduced() {
    let x = uniform_mat(20, 3, -1.0, 1.0, 71);
    let y = Mat::from_fn(20, 1, |_, _| -0.75);
    let gp = GpModel::fit(x, constant_noise(y, 1e-8), params(1.0, 1.0)).unwrap();
    let mu = gp.posterior_mean_train();
    assert!((0..20).all(|i| (mu[(i, 0)] + 0.75).abs() < 1e-3));
}

#[test]
fn solve_residual_is_tiny() {
    let x = uniform_mat(50, 4, -1.0, 1.0, 81);
    let targets = random_targets(50, 2, 0.1, 2.0, 82);
    let gp = GpModel::fit(x, targets.clone(), params(1.0, 1.0)).unwrap();
    for c in 0..2 {
        let a = gp.covariance(c);
        let wts = gp.weights(c);
        let back = &a * Mat::from_fn(50, 1, |i, _| wts[i]);
        for i in 0..50 {
            assert!((back[(i, 0)] - targets.y_dot[(i, c)]).abs() < 1e-8);
        }
    }
}

#[test]
fn predictive_variance_is_bounded_by_prior() {
    let x = uniform_mat(30, 3, -1.0, 1.0, 91);
    let s2 = 2.3;
    let gp = GpModel::fit(x, random_targets(30, 2, 0.01, 1.0, 92), params(0.8, s2)).unwrap();
    let test = uniform_mat(1000, 3, -2.0, 2.0, 93);
    let pred = gp.predict(&test).unwrap();
    for i in 0..1000 {
        for c in 0..2 {
            let v = pred.variance[(i, c)];
            assert!((0.0..=s2 + 1e-9).contains(&v), "variance {v}");
        }
    }
}

#[test]
fn conjugate_gradients_agree_with_dense_solve() {
    let n = 200;
    let x = uniform_mat(n, 4, -1.0, 1.0, 101);
    let targets = random_targets(n, 2, 0.1, 2.0, 102);
    let gp = GpModel::fit(x, targets.clone(), params(1.0, 1.0)).unwrap();
    for c in 0..2 {
        let rhs = column(&targets.y_dot, c);
        let sol = gp.cg_solve(c, &rhs, &CgOptions::default()).unwrap();
        let dense = gp.weights(c);
        let num: f64 = sol.x.iter().zip(&dense).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = dense.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-6, "block {c}: relative error {}", num / den);
    }
}

#[test]
fn full_rank_preconditioner_is_an_exact_inverse() {
    let n = 40;
    let x = uniform_mat(n, 3, -1.0, 1.0, 111);
    let targets = random_targets(n, 1, 0.1, 2.0, 112);
    let gp = GpModel::fit(x.clone(), targets.clone(), params(1.0, 1.0)).unwrap();
    let k = gram(&x, gp.params());
    let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    let low_rank = pivoted_cholesky(&diag, |j| column(&k, j), n, 0.0);
    let noise: Vec<f64> = (0..n).map(|i| targets.sigma_dot[(i, 0)] + gp.jitter(0)).collect();
    let pre = WoodburyPreconditioner::new(low_rank, &noise).unwrap();
    let rhs = column(&targets.y_dot, 0);
    let applied = pre.apply(&rhs);
    let dense = gp.weights(0);
    for i in 0..n {
        assert!((applied[i] - dense[i]).abs() < 1e-8 * (1.0 + dense[i].abs()));
    }
    let opts = CgOptions { preconditioner_rank: n, ..CgOptions::default() };
    let sol = gp.cg_solve(0, &rhs, &opts).unwrap();
    assert!(sol.iterations <= 2, "took {} iterations", sol.iterations);
}
