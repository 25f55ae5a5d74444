//! Dirichlet disambiguation.
//!
//! Every instance carries a Dirichlet concentration vector `α` over the
//! (augmented) label space. Non-candidates sit at the prior `α_ε`; candidates
//! start uniform and are re-weighted by a softmax of classifier scores
//! restricted to the candidate set. Each `Gamma(α, 1)` marginal is then
//! replaced by the log-normal with the same mean and variance, which turns
//! `α` into a regression target `ẏ = ln α − σ̇/2` with noise `σ̇ = ln(1 + 1/α)`.

use faer::Mat;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::InstanceView;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletPrior {
    alpha_eps: f64,
}

impl DirichletPrior {
    pub fn new(alpha_eps: f64) -> Result<Self> {
        if alpha_eps > 0.0 && alpha_eps.is_finite() {
            Ok(Self { alpha_eps })
        } else {
            Err(Error::InvalidArgument(format!("Dirichlet prior {alpha_eps} must be positive and finite")))
        }
    }

    pub fn alpha_eps(&self) -> f64 {
        self.alpha_eps
    }
}

impl Default for DirichletPrior {
    fn default() -> Self {
        Self { alpha_eps: 1e-4 }
    }
}

/// `n × width` matrix of Dirichlet concentrations.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatrix(Mat<f64>);

impl AlphaMatrix {
    pub fn from_mat(m: Mat<f64>) -> Self {
        Self(m)
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, class: usize) -> f64 {
        self.0[(row, class)]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.width()).map(|c| self.0[(row, c)]).collect()
    }
}

/// Uniform initialization: candidates get `1/|ỹ| + α_ε`, others `α_ε`.
pub fn init_alpha(view: &InstanceView, prior: DirichletPrior) -> AlphaMatrix {
    let (n, w) = (view.num_rows(), view.width());
    let eps = prior.alpha_eps();
    let mut a = Mat::<f64>::zeros(n, w);
    for i in 0..n {
        let mask = view.mask(i);
        let share = 1.0 / view.candidate_count(i) as f64;
        for c in 0..w {
            a[(i, c)] = if mask[c] { share + eps } else { eps };
        }
    }
    AlphaMatrix(a)
}

/// Softmax of `logits` over the candidate entries; zero elsewhere.
/// Candidate entries sum to one.
pub fn candidate_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&h, _)| h)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&h, &m)| if m { (h - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Re-weights candidates by the softmax of the classifier scores `logits`
/// (`n × width`), restricted to each row's candidate set.
pub fn update_alpha(view: &InstanceView, logits: &Mat<f64>, prior: DirichletPrior) -> Result<AlphaMatrix> {
    let (n, w) = (view.num_rows(), view.width());
    if logits.nrows() != n || logits.ncols() != w {
        return Err(Error::DimensionMismatch { expected: n * w, found: logits.nrows() * logits.ncols() });
    }
    let eps = prior.alpha_eps();
    let mut a = Mat::<f64>::zeros(n, w);
    let mut h = vec![0.0; w];
    for i in 0..n {
        for (c, v) in h.iter_mut().enumerate() {
            *v = logits[(i, c)];
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite classifier score in row {i}")));
        }
        let p = candidate_softmax(&h, view.mask(i));
        for c in 0..w {
            a[(i, c)] = p[c] + eps;
        }
    }
    Ok(AlphaMatrix(a))
}

/// `ln γ` for `γ ~ Gamma(shape, 1)`.
///
/// Marsaglia–Tsang for `shape >= 1`; for `shape < 1` the boost
/// `γ = γ' · U^{1/shape}` with `γ' ~ Gamma(shape + 1, 1)`, evaluated in log
/// space so tiny shapes such as `1e-4` do not underflow.
pub fn sample_gamma_ln(shape: f64, rng: &mut Rng) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        // u in [0, 1); 1 - u is in (0, 1]
        return sample_gamma_ln(shape + 1.0, rng) + (1.0 - u).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let u = 1.0 - u;
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d.ln() + v.ln();
        }
    }
}

/// Draws `count` points of `Dir(alpha)` by normalizing independent Gamma
/// variates. Normalization happens in log space.
pub fn sample_dirichlet(alpha: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument("Dirichlet concentrations must be positive and finite".into()));
    }
    const MAX_RETRIES: usize = 8;
    let mut rng = rng::seeded(seed);
    let mut log_g = vec![0.0; alpha.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut draw = None;
        for _ in 0..MAX_RETRIES {
            for (lg, &a) in log_g.iter_mut().zip(alpha) {
                *lg = sample_gamma_ln(a, &mut rng);
            }
            let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                continue;
            }
            let mut theta: Vec<f64> = log_g.iter().map(|&l| (l - max).exp()).collect();
            let total: f64 = theta.iter().sum();
            theta.iter_mut().for_each(|t| *t /= total);
            draw = Some(theta);
            break;
        }
        out.push(draw.unwrap_or_else(|| vec![1.0 / alpha.len() as f64; alpha.len()]));
    }
    Ok(out)
}

/// Log-space regression targets `ẏ` and their noise variances `σ̇`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedTargets {
    pub y_dot: Mat<f64>,
    pub sigma_dot: Mat<f64>,
}

impl TransformedTargets {
    pub fn nrows(&self) -> usize {
        self.y_dot.nrows()
    }

    pub fn width(&self) -> usize {
        self.y_dot.ncols()
    }

    /// Column `c` of `ẏ`.
    pub fn targets(&self, c: usize) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.y_dot[(i, c)]).collect()
    }

    /// Column `c` of `σ̇`.
    pub fn noise(&self, c: usize) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.sigma_dot[(i, c)]).collect()
    }
}

/// `(σ̇, ẏ)` for one concentration.
pub fn lognormal_params(alpha: f64) -> (f64, f64) {
    let sigma = (1.0 / alpha).ln_1p();
    (sigma, alpha.ln() - 0.5 * sigma)
}

/// Mean and variance of `LogNormal(ẏ, σ̇)`; the inverse of [`lognormal_params`].
pub fn lognormal_moments(y_dot: f64, sigma_dot: f64) -> (f64, f64) {
    let mean = (y_dot + 0.5 * sigma_dot).exp();
    let var = sigma_dot.exp_m1() * (2.0 * y_dot + sigma_dot).exp();
    (mean, var)
}

pub fn transform_targets(alpha: &AlphaMatrix) -> TransformedTargets {
    let (n, w) = (alpha.nrows(), alpha.width());
    let mut y_dot = Mat::<f64>::zeros(n, w);
    let mut sigma_dot = Mat::<f64>::zeros(n, w);
    for c in 0..w {
        for i in 0..n {
            let (s, y) = lognormal_params(alpha.0[(i, c)]);
            sigma_dot[(i, c)] = s;
            y_dot[(i, c)] = y;
        }
    }
    TransformedTargets { y_dot, sigma_dot }
}
