//! Matérn covariance at half-integer smoothness.
//!
//! For `ν ∈ {1/2, 3/2, 5/2}` the Bessel form reduces to a polynomial times an
//! exponential in `t = √(2ν)·r/ℓ`:
//!
//! | ν   | m(t)                     |
//! |-----|--------------------------|
//! | 1/2 | e^{-t}                   |
//! | 3/2 | (1 + t) e^{-t}           |
//! | 5/2 | (1 + t + t²/3) e^{-t}    |
//!
//! and `k(x, x') = s² m(t)`. Both `ℓ` and `s²` are stored as logarithms.
//! One kernel is shared by every output block; outputs are uncorrelated.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "0.5")]
    Half,
    #[serde(rename = "1.5")]
    ThreeHalves,
    #[serde(rename = "2.5")]
    FiveHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(Self::Half),
            v if v == 1.5 => Ok(Self::ThreeHalves),
            v if v == 2.5 => Ok(Self::FiveHalves),
            _ => Err(Error::InvalidArgument(format!("nu must be 0.5, 1.5 or 2.5, got {nu}"))),
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }

    /// `m(t)` for unit output scale.
    pub fn shape(self, t: f64) -> f64 {
        let e = (-t).exp();
        match self {
            Self::Half => e,
            Self::ThreeHalves => (1.0 + t) * e,
            Self::FiveHalves => (1.0 + t + t * t / 3.0) * e,
        }
    }

    /// `∂m(t(ℓ))/∂ln ℓ = -t·m'(t)`.
    fn shape_dlog_lengthscale(self, t: f64) -> f64 {
        let e = (-t).exp();
        match self {
            Self::Half => t * e,
            Self::ThreeHalves => t * t * e,
            Self::FiveHalves => t * t * (1.0 + t) / 3.0 * e,
        }
    }
}

/// Trainable kernel parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelParam {
    LogLengthscale,
    LogOutputscale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    nu: Smoothness,
    pub log_lengthscale: f64,
    pub log_outputscale: f64,
    pub train_lengthscale: bool,
    pub train_outputscale: bool,
}

impl KernelParams {
    /// `ℓ = 1`, `s² = 1`, both trainable.
    pub fn new(nu: Smoothness) -> Self {
        Self {
            nu,
            log_lengthscale: 0.0,
            log_outputscale: 0.0,
            train_lengthscale: true,
            train_outputscale: true,
        }
    }

    pub fn nu(&self) -> Smoothness {
        self.nu
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn outputscale(&self) -> f64 {
        self.log_outputscale.exp()
    }

    /// Trainable parameters in canonical order.
    pub fn trainable(&self) -> Vec<KernelParam> {
        let mut out = Vec::with_capacity(2);
        if self.train_lengthscale {
            out.push(KernelParam::LogLengthscale);
        }
        if self.train_outputscale {
            out.push(KernelParam::LogOutputscale);
        }
        out
    }

    pub fn get(&self, p: KernelParam) -> f64 {
        match p {
            KernelParam::LogLengthscale => self.log_lengthscale,
            KernelParam::LogOutputscale => self.log_outputscale,
        }
    }

    pub fn set(&mut self, p: KernelParam, value: f64) {
        match p {
            KernelParam::LogLengthscale => self.log_lengthscale = value,
            KernelParam::LogOutputscale => self.log_outputscale = value,
        }
    }

    fn scaled_distance(&self, r: f64) -> f64 {
        (2.0 * self.nu.nu()).sqrt() * r / self.lengthscale()
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn kernel_eval(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    params.outputscale() * params.nu.shape(params.scaled_distance(distance(x, x2)))
}

fn rows(x: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| (0..x.ncols()).map(|k| x[(i, k)]).collect()).collect()
}

/// Symmetric `n × n` Gram matrix. The upper triangle mirrors the lower one.
pub fn gram(x: &Mat<f64>, params: &KernelParams) -> Mat<f64> {
    let xs = rows(x);
    let n = xs.len();
    let s2 = params.outputscale();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = s2;
        for i in j + 1..n {
            let v = s2 * params.nu.shape(params.scaled_distance(distance(&xs[i], &xs[j])));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `n × t` matrix of `k(x_i, z_j)`.
pub fn cross_gram(x: &Mat<f64>, z: &Mat<f64>, params: &KernelParams) -> Result<Mat<f64>> {
    if x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), found: z.ncols() });
    }
    let (xs, zs) = (rows(x), rows(z));
    let s2 = params.outputscale();
    Ok(Mat::from_fn(xs.len(), zs.len(), |i, j| {
        s2 * params.nu.shape(params.scaled_distance(distance(&xs[i], &zs[j])))
    }))
}

/// Gram matrix together with `∂K/∂ln ℓ` (`None` when ℓ is frozen).
/// `∂K/∂ln s²` is `K` itself.
pub fn gram_with_lengthscale_grad(x: &Mat<f64>, params: &KernelParams) -> (Mat<f64>, Option<Mat<f64>>) {
    let xs = rows(x);
    let n = xs.len();
    let s2 = params.outputscale();
    let mut k = Mat::<f64>::zeros(n, n);
    let mut dk = params.train_lengthscale.then(|| Mat::<f64>::zeros(n, n));
    for j in 0..n {
        k[(j, j)] = s2;
        for i in j + 1..n {
            let t = params.scaled_distance(distance(&xs[i], &xs[j]));
            let v = s2 * params.nu.shape(t);
            k[(i, j)] = v;
            k[(j, i)] = v;
            if let Some(dk) = dk.as_mut() {
                let g = s2 * params.nu.shape_dlog_lengthscale(t);
                dk[(i, j)] = g;
                dk[(j, i)] = g;
            }
        }
    }
    (k, dk)
}

/// `∂K/∂Φ` for each trainable parameter, in [`KernelParams::trainable`] order.
pub fn gram_param_grads(x: &Mat<f64>, params: &KernelParams) -> Vec<(KernelParam, Mat<f64>)> {
    let (k, dl) = gram_with_lengthscale_grad(x, params);
    let mut out = Vec::with_capacity(2);
    if let Some(dl) = dl {
        out.push((KernelParam::LogLengthscale, dl));
    }
    if params.train_outputscale {
        out.push((KernelParam::LogOutputscale, k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(nu: Smoothness) -> KernelParams {
        KernelParams::new(nu)
    }

    #[test]
    fn zero_distance_gives_outputscale() {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            let mut params = p(nu);
            assert_eq!(kernel_eval(&[1.0, 2.0], &[1.0, 2.0], &params), 1.0);
            params.log_outputscale = 0.7;
            assert!((kernel_eval(&[3.0], &[3.0], &params) - 0.7f64.exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_values() {
        let v = kernel_eval(&[0.0], &[1.0], &p(Smoothness::Half));
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        let v = kernel_eval(&[0.0, 0.0], &[0.6, 0.8], &p(Smoothness::FiveHalves));
        let s5 = 5f64.sqrt();
        assert!((v - (1.0 + s5 + 5.0 / 3.0) * (-s5).exp()).abs() < 1e-15);
        assert!((v - 0.52399).abs() < 1e-5);
    }

    #[test]
    fn from_nu_rejects_other_values() {
        assert!(Smoothness::from_nu(1.0).is_err());
        assert_eq!(Smoothness::from_nu(1.5).unwrap(), Smoothness::ThreeHalves);
    }

    #[test]
    fn gram_shapes_and_duplicates() {
        let x = Mat::from_fn(1, 2, |_, k| k as f64);
        let k = gram(&x, &p(Smoothness::FiveHalves));
        assert_eq!((k.nrows(), k.ncols(), k[(0, 0)]), (1, 1, 1.0));

        let x = Mat::from_fn(3, 2, |i, k| if i == 2 { k as f64 } else { (i + k) as f64 });
        // rows 0 and 2 coincide
        let k = gram(&x, &p(Smoothness::ThreeHalves));
        assert_eq!(k[(0, 2)], 1.0);
        let c = cross_gram(&x, &x, &p(Smoothness::ThreeHalves)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c[(i, j)], k[(i, j)]);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let z = Mat::from_fn(4, 2, |i, _| i as f64);
        assert_eq!(cross_gram(&x, &z, &p(Smoothness::Half)).unwrap().shape(), (3, 4));
        let bad = Mat::<f64>::zeros(1, 3);
        assert!(cross_gram(&x, &bad, &p(Smoothness::Half)).is_err());
    }

    #[test]
    fn outputscale_gradient_is_gram() {
        let x = Mat::from_fn(4, 2, |i, k| (i * 3 + k) as f64 * 0.3);
        let params = p(Smoothness::FiveHalves);
        let grads = gram_param_grads(&x, &params);
        let k = gram(&x, &params);
        assert_eq!(grads[1].0, KernelParam::LogOutputscale);
        assert_eq!(grads[1].1, k);
        // flat at the origin
        for i in 0..4 {
            assert_eq!(grads[0].1[(i, i)], 0.0);
        }
    }

    #[test]
    fn frozen_parameters_have_no_gradients() {
        let x = Mat::from_fn(2, 1, |i, _| i as f64);
        let mut params = p(Smoothness::Half);
        params.train_lengthscale = false;
        params.train_outputscale = false;
        assert!(gram_param_grads(&x, &params).is_empty());
    }

    #[test]
    fn decays_with_distance() {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            let mut prev = f64::INFINITY;
            for step in 0..200 {
                let v = nu.shape(step as f64 * 0.05);
                assert!(v <= prev);
                prev = v;
            }
        }
    }
}
