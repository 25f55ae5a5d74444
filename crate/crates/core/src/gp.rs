//! Exact heteroscedastic GP regression with one independent output block
//! per class.
//!
//! Every block shares the kernel `K` but has its own noise diagonal
//! `Σ_c = diag(σ̇_{·c})`, so the marginal covariance of block `c` is
//! `A_c = K + Σ_c + jitter·I`. The objective summed over blocks is
//!
//! ```text
//! L = Σ_c  ln|A_c| + ẏ_cᵀ A_c⁻¹ ẏ_c
//! ∂L/∂Φ = Σ_c  tr(A_c⁻¹ ∂K/∂Φ) − ẏ_cᵀ A_c⁻¹ (∂K/∂Φ) A_c⁻¹ ẏ_c
//! ```
//!
//! (twice the usual negative log marginal likelihood, without the constant).

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::disambiguation::TransformedTargets;
use crate::error::{Error, Result};
use crate::kernel::{self, KernelParam, KernelParams};

/// Base jitter relative to the output scale.
pub const JITTER_SCALE: f64 = 1e-6;
/// Jitter escalations (×10 each) tried after the first failed factorization.
pub const JITTER_RETRIES: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct OutputBlock {
    pub(crate) llt: Llt<f64>,
    /// `A⁻¹ ẏ`
    pub(crate) weights: Mat<f64>,
    pub(crate) log_det: f64,
    pub(crate) jitter: f64,
}

/// A fitted multi-output GP. Immutable; refit to change parameters or targets.
#[derive(Clone, Debug)]
pub struct GpModel {
    pub(crate) params: KernelParams,
    pub(crate) train_x: Mat<f64>,
    pub(crate) targets: TransformedTargets,
    /// `K` without jitter.
    pub(crate) kernel: Mat<f64>,
    dk_lengthscale: Option<Mat<f64>>,
    pub(crate) blocks: Vec<OutputBlock>,
}

/// Latent (noise-free) predictive moments, `t × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Mat<f64>,
    pub variance: Mat<f64>,
}

impl PredictiveDistribution {
    pub fn nrows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn width(&self) -> usize {
        self.mean.ncols()
    }
}

fn col_vec(m: &Mat<f64>, c: usize) -> Mat<f64> {
    Mat::from_fn(m.nrows(), 1, |i, _| m[(i, c)])
}

fn dot(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (0..a.nrows()).map(|i| a[(i, 0)] * b[(i, 0)]).sum()
}

fn factorize(
    kernel: &Mat<f64>,
    noise: &Mat<f64>,
    targets: &Mat<f64>,
    c: usize,
    start_jitter: f64,
) -> Result<OutputBlock> {
    let n = kernel.nrows();
    let mut jitter = start_jitter;
    for attempt in 0..=JITTER_RETRIES {
        if attempt > 0 {
            jitter *= 10.0;
        }
        let mut a = kernel.clone();
        for i in 0..n {
            a[(i, i)] += noise[(i, c)] + jitter;
        }
        if let Ok(llt) = Llt::new(a.as_ref(), Side::Lower) {
            let l = llt.L();
            let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
            let weights = llt.solve(col_vec(targets, c));
            return Ok(OutputBlock { llt, weights, log_det, jitter });
        }
    }
    Err(Error::NotPositiveDefinite { block: c, jitter })
}

impl GpModel {
    /// Factorizes `K + Σ_c + jitter·I` for every output block.
    pub fn fit(train_x: Mat<f64>, targets: TransformedTargets, params: KernelParams) -> Result<Self> {
        let jitter = JITTER_SCALE * params.outputscale();
        let start = vec![jitter; targets.width()];
        Self::fit_with_jitter(train_x, targets, params, &start)
    }

    /// [`GpModel::fit`] with an explicit starting jitter per block.
    pub fn fit_with_jitter(
        train_x: Mat<f64>,
        targets: TransformedTargets,
        params: KernelParams,
        start_jitter: &[f64],
    ) -> Result<Self> {
        let n = train_x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("GP needs at least one training point".into()));
        }
        if targets.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: targets.nrows() });
        }
        if start_jitter.len() != targets.width() {
            return Err(Error::DimensionMismatch { expected: targets.width(), found: start_jitter.len() });
        }
        for c in 0..targets.width() {
            for i in 0..n {
                let s = targets.sigma_dot[(i, c)];
                if !(s > 0.0 && s.is_finite()) || !targets.y_dot[(i, c)].is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "targets must be finite with positive noise (row {i}, block {c})"
                    )));
                }
            }
        }
        let (kernel, dk_lengthscale) = kernel::gram_with_lengthscale_grad(&train_x, &params);
        let blocks = (0..targets.width())
            .into_par_iter()
            .map(|c| factorize(&kernel, &targets.sigma_dot, &targets.y_dot, c, start_jitter[c]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, train_x, targets, kernel, dk_lengthscale, blocks })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn train_x(&self) -> &Mat<f64> {
        &self.train_x
    }

    pub fn targets(&self) -> &TransformedTargets {
        &self.targets
    }

    pub fn num_outputs(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_train(&self) -> usize {
        self.train_x.nrows()
    }

    /// Jitter that made block `c` factorize.
    pub fn jitter(&self, c: usize) -> f64 {
        self.blocks[c].jitter
    }

    pub fn jitters(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.jitter).collect()
    }

    /// `A_c⁻¹ ẏ_c`.
    pub fn weights(&self, c: usize) -> Vec<f64> {
        let w = &self.blocks[c].weights;
        (0..w.nrows()).map(|i| w[(i, 0)]).collect()
    }

    /// Lower Cholesky factor of `A_c`.
    pub fn factor(&self, c: usize) -> faer::MatRef<'_, f64> {
        self.blocks[c].llt.L()
    }

    /// `A_c = K + Σ_c + jitter·I`, assembled directly.
    pub fn covariance(&self, c: usize) -> Mat<f64> {
        let mut a = self.kernel.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += self.targets.sigma_dot[(i, c)] + self.blocks[c].jitter;
        }
        a
    }

    /// Per-block objective terms `ln|A_c| + ẏ_cᵀ A_c⁻¹ ẏ_c`.
    pub fn nlml_terms(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(c, b)| b.log_det + dot(&col_vec(&self.targets.y_dot, c), &b.weights))
            .collect()
    }

    pub fn nlml(&self) -> f64 {
        self.nlml_terms().iter().sum()
    }

    /// Gradient of [`GpModel::nlml`] over the trainable parameters, in
    /// [`KernelParams::trainable`] order. The output-scale derivative
    /// includes the jitter, which scales with `s²`.
    pub fn nlml_grad(&self) -> Vec<f64> {
        let trainable = self.params.trainable();
        if trainable.is_empty() {
            return Vec::new();
        }
        let n = self.num_train();
        let per_block: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .map(|b| {
                let inv = b.llt.inverse();
                let a = &b.weights;
                trainable
                    .iter()
                    .map(|p| match p {
                        KernelParam::LogLengthscale => {
                            let dk = self.dk_lengthscale.as_ref().expect("computed when trainable");
                            let mut tr = 0.0;
                            for j in 0..n {
                                for i in 0..n {
                                    tr += inv[(i, j)] * dk[(i, j)];
                                }
                            }
                            tr - dot(a, &(dk * a))
                        }
                        KernelParam::LogOutputscale => {
                            let k = &self.kernel;
                            let mut tr = 0.0;
                            for j in 0..n {
                                for i in 0..n {
                                    tr += inv[(i, j)] * k[(i, j)];
                                }
                                tr += b.jitter * inv[(j, j)];
                            }
                            tr - dot(a, &(k * a)) - b.jitter * dot(a, a)
                        }
                    })
                    .collect()
            })
            .collect();
        (0..trainable.len())
            .map(|p| per_block.iter().map(|g| g[p]).sum())
            .collect()
    }

    /// Latent posterior means at the training inputs, `K A_c⁻¹ ẏ_c` per block.
    pub fn posterior_mean_train(&self) -> Mat<f64> {
        let n = self.num_train();
        let mut out = Mat::<f64>::zeros(n, self.num_outputs());
        for (c, b) in self.blocks.iter().enumerate() {
            let m = &self.kernel * &b.weights;
            for i in 0..n {
                out[(i, c)] = m[(i, 0)];
            }
        }
        out
    }

    /// Latent predictive mean and variance at `test_x` (`t × d`).
    pub fn predict(&self, test_x: &Mat<f64>) -> Result<PredictiveDistribution> {
        if test_x.ncols() != self.train_x.ncols() {
            return Err(Error::DimensionMismatch { expected: self.train_x.ncols(), found: test_x.ncols() });
        }
        let t = test_x.nrows();
        let k_star = kernel::cross_gram(&self.train_x, test_x, &self.params)?;
        let prior_var = self.params.outputscale();
        let columns: Vec<(Vec<f64>, Vec<f64>)> = self
            .blocks
            .par_iter()
            .map(|b| {
                let mean = k_star.transpose() * &b.weights;
                let mut v = k_star.clone();
                b.llt.L().solve_lower_triangular_in_place(v.as_mut());
                let var: Vec<f64> = (0..t)
                    .map(|j| {
                        let explained: f64 = (0..v.nrows()).map(|i| v[(i, j)] * v[(i, j)]).sum();
                        (prior_var - explained).max(0.0)
                    })
                    .collect();
                ((0..t).map(|j| mean[(j, 0)]).collect(), var)
            })
            .collect();
        let mut mean = Mat::<f64>::zeros(t, self.num_outputs());
        let mut variance = Mat::<f64>::zeros(t, self.num_outputs());
        for (c, (m, v)) in columns.iter().enumerate() {
            for j in 0..t {
                mean[(j, c)] = m[j];
                variance[(j, c)] = v[j];
            }
        }
        Ok(PredictiveDistribution { mean, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Smoothness;

    fn single(y: f64, s: f64) -> GpModel {
        let targets = TransformedTargets {
            y_dot: Mat::from_fn(1, 1, |_, _| y),
            sigma_dot: Mat::from_fn(1, 1, |_, _| s),
        };
        let mut params = KernelParams::new(Smoothness::FiveHalves);
        params.log_outputscale = (1.0f64 - 1e-6).ln();
        // k(x, x) + jitter = 1 exactly up to rounding
        GpModel::fit(Mat::zeros(1, 2), targets, params).unwrap()
    }

    #[test]
    fn scalar_solve_and_shrinkage() {
        let m = single(2.0, 1.0);
        assert!((m.weights(0)[0] - 1.0).abs() < 1e-12);
        let mu = m.posterior_mean_train();
        assert!((mu[(0, 0)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn scalar_objective_terms() {
        // A = [1], ẏ = 0 → 0
        let m = single(0.0, 1e-6 + 1e-12);
        assert!(m.nlml().abs() < 1e-5);
    }

    #[test]
    fn duplicated_points_still_factorize() {
        let x = Mat::from_fn(2, 1, |_, _| 0.5);
        let targets = TransformedTargets {
            y_dot: Mat::from_fn(2, 1, |i, _| if i == 0 { 1.0 } else { -1.0 }),
            sigma_dot: Mat::from_fn(2, 1, |_, _| 0.1),
        };
        let m = GpModel::fit(x, targets, KernelParams::new(Smoothness::Half)).unwrap();
        assert!(m.nlml().is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = KernelParams::new(Smoothness::Half);
        let t = TransformedTargets { y_dot: Mat::zeros(0, 1), sigma_dot: Mat::zeros(0, 1) };
        assert!(GpModel::fit(Mat::zeros(0, 1), t, params).is_err());
        let t = TransformedTargets { y_dot: Mat::zeros(1, 1), sigma_dot: Mat::zeros(1, 1) };
        assert!(GpModel::fit(Mat::zeros(1, 1), t, params).is_err());
        let t = TransformedTargets {
            y_dot: Mat::zeros(1, 1),
            sigma_dot: Mat::from_fn(1, 1, |_, _| 1.0),
        };
        let m = GpModel::fit(Mat::zeros(1, 1), t, params).unwrap();
        assert!(matches!(m.predict(&Mat::zeros(2, 3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn frozen_parameters_give_empty_gradient() {
        let mut params = KernelParams::new(Smoothness::Half);
        params.train_lengthscale = false;
        params.train_outputscale = false;
        let t = TransformedTargets {
            y_dot: Mat::from_fn(2, 1, |i, _| i as f64),
            sigma_dot: Mat::from_fn(2, 1, |_, _| 1.0),
        };
        let m = GpModel::fit(Mat::from_fn(2, 1, |i, _| i as f64), t, params).unwrap();
        assert!(m.nlml_grad().is_empty());
    }

    #[test]
    fn far_test_point_reverts_to_prior() {
        let t = TransformedTargets {
            y_dot: Mat::from_fn(3, 2, |i, c| (i + c) as f64 - 2.0),
            sigma_dot: Mat::from_fn(3, 2, |_, _| 0.5),
        };
        let mut params = KernelParams::new(Smoothness::FiveHalves);
        params.log_outputscale = 0.4;
        let m = GpModel::fit(Mat::from_fn(3, 1, |i, _| i as f64), t, params).unwrap();
        let p = m.predict(&Mat::from_fn(1, 1, |_, _| 1e4)).unwrap();
        for c in 0..2 {
            assert!(p.mean[(0, c)].abs() < 1e-12);
            assert!((p.variance[(0, c)] - 0.4f64.exp()).abs() < 1e-12);
        }
    }
}
