//! The training loop.
//!
//! ```text
//! augment labels, α ← uniform init
//! for t in 0..T:
//!     (ẏ, σ̇) ← transform(α)
//!     fit GP, evaluate objective and gradient
//!     Φ ← Φ + Adam(∇, cosine_lr(t))
//!     α ← candidate softmax of h + α_ε        (full variant only)
//! ```
//!
//! The returned model is the GP refitted with the final `Φ` on the targets of
//! the last iteration, so a single frozen iteration is exactly one fit on the
//! initial targets.

use std::io::Write;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_instance_view, build_raw_instance_view, standardize_features, InstanceView, LabelSpace,
    MiplDataset, Split, Standardizer,
};
use crate::disambiguation::{init_alpha, transform_targets, update_alpha, AlphaMatrix, DirichletPrior};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernel::{KernelParams, Smoothness};
use crate::optim::{cosine_lr, AdamState};
use crate::predictor::mc_class_probs;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Augmented labels with Dirichlet re-weighting.
    Full,
    /// Augmented labels, α frozen at its uniform initialization.
    Uniform,
    /// No negative class; instances keep the raw bag candidate sets.
    Naive,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "uniform" => Ok(Self::Uniform),
            "naive" => Ok(Self::Naive),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?} (full, uniform, naive)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Uniform => "uniform",
            Self::Naive => "naive",
        }
    }
}

/// Classifier score `h` used to re-weight α.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    /// Latent posterior means at the training points.
    PosteriorMean,
    /// `ln E[θ]` at the training points, by Monte Carlo.
    ExpectedTheta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub alpha_eps: f64,
    pub nu: Smoothness,
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub variant: Variant,
    pub seed: u64,
    pub standardize: bool,
    pub train_lengthscale: bool,
    pub train_outputscale: bool,
    pub alpha_source: AlphaSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            alpha_eps: 1e-4,
            nu: Smoothness::FiveHalves,
            mc_samples: 512,
            learning_rate: 0.1,
            adam_betas: crate::optim::DEFAULT_BETAS,
            variant: Variant::Full,
            seed: 0,
            standardize: true,
            train_lengthscale: false,
            train_outputscale: false,
            alpha_source: AlphaSource::PosteriorMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::InvalidArgument(format!("Adam betas ({b1}, {b2}) must lie in [0, 1)")));
        }
        DirichletPrior::new(self.alpha_eps)?;
        Ok(())
    }

    pub fn kernel_params(&self) -> KernelParams {
        let mut p = KernelParams::new(self.nu);
        p.train_lengthscale = self.train_lengthscale;
        p.train_outputscale = self.train_outputscale;
        p
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub label_space: LabelSpace,
    pub variant: Variant,
    pub standardizer: Option<Standardizer>,
    pub gp: GpModel,
    /// Concentrations behind the GP's targets.
    pub alpha: AlphaMatrix,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn feature_dim(&self) -> usize {
        self.gp.train_x().ncols()
    }

    pub fn width(&self) -> usize {
        self.label_space.width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub nlml: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub trace: Vec<TraceRow>,
    /// α after the last update (equal to `model.alpha` unless the variant re-weights).
    pub final_alpha: AlphaMatrix,
    /// α at initialization, kept for diagnostics.
    pub initial_alpha: AlphaMatrix,
    pub view: InstanceView,
}

/// Trains on the train side of `split`.
pub fn train(dataset: &MiplDataset, split: &Split, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit_model(&dataset.subset(&split.train_bag_ids)?, cfg)
}

/// Trains on every bag of `train_set`.
pub fn fit_model(train_set: &MiplDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prior = DirichletPrior::new(cfg.alpha_eps)?;
    let view = match cfg.variant {
        Variant::Naive => build_raw_instance_view(train_set)?,
        Variant::Full | Variant::Uniform => build_instance_view(train_set)?,
    };
    let (view, standardizer) = if cfg.standardize {
        let (v, s) = standardize_features(view, None)?;
        (v, Some(s))
    } else {
        (view, None)
    };
    let x = view.features().clone();

    let initial_alpha = init_alpha(&view, prior);
    let mut alpha = initial_alpha.clone();
    let mut params = cfg.kernel_params();
    let trainable = params.trainable();
    let mut adam = AdamState::new(trainable.len(), cfg.adam_betas);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut last_alpha = alpha.clone();

    for t in 0..cfg.iterations {
        let targets = transform_targets(&alpha);
        let gp = GpModel::fit(x.clone(), targets, params)?;
        let nlml = gp.nlml();
        if !nlml.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        let lr = cosine_lr(t, cfg.iterations, cfg.learning_rate);
        let grad = gp.nlml_grad();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        let deltas = adam.step(&grad, lr);
        for (p, d) in trainable.iter().zip(&deltas) {
            params.set(*p, params.get(*p) + d);
        }
        log::debug!("iter {t}: nlml {nlml:.6} lr {lr:.3e} lengthscale {:.4} outputscale {:.4}",
            params.lengthscale(), params.outputscale());
        trace.push(TraceRow { iteration: t, nlml, lr });

        last_alpha = alpha.clone();
        if cfg.variant == Variant::Full {
            let h = match cfg.alpha_source {
                AlphaSource::PosteriorMean => gp.posterior_mean_train(),
                AlphaSource::ExpectedTheta => {
                    let pred = gp.predict(&x)?;
                    let seed = rng::derive_seed(cfg.seed, &[t as u64]);
                    let theta = mc_class_probs(&pred, cfg.mc_samples, seed);
                    Mat::from_fn(theta.nrows(), theta.ncols(), |i, c| theta[(i, c)].max(f64::MIN_POSITIVE).ln())
                }
            };
            alpha = update_alpha(&view, &h, prior)?;
        }
    }

    let gp = GpModel::fit(x, transform_targets(&last_alpha), params)?;
    let model = TrainedModel {
        label_space: view.label_space(),
        variant: cfg.variant,
        standardizer,
        gp,
        alpha: last_alpha,
        config: cfg.clone(),
    };
    Ok(TrainOutcome { model, trace, final_alpha: alpha, initial_alpha, view })
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "iteration,nlml,lr")?;
    for r in trace {
        writeln!(w, "{},{},{}", r.iteration, r.nlml, r.lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bag;

    fn toy() -> MiplDataset {
        let bags = (0..8)
            .map(|b| {
                let c = b % 2;
                let centre = if c == 0 { -2.0 } else { 2.0 };
                Bag {
                    bag_id: format!("b{b}"),
                    instances: (0..3).map(|j| vec![centre + 0.1 * j as f64, 0.05 * b as f64]).collect(),
                    candidate_labels: vec![c, 2],
                    true_label: Some(c),
                }
            })
            .collect();
        MiplDataset::new(3, 2, bags, Default::default()).unwrap()
    }

    #[test]
    fn trace_follows_schedule() {
        let cfg = TrainConfig { iterations: 7, ..Default::default() };
        let out = fit_model(&toy(), &cfg).unwrap();
        assert_eq!(out.trace.len(), 7);
        for r in &out.trace {
            assert_eq!(r.lr, cosine_lr(r.iteration, 7, 0.1));
            assert!(r.nlml.is_finite());
        }
    }

    #[test]
    fn uniform_variant_keeps_initial_alpha() {
        let cfg = TrainConfig { iterations: 4, variant: Variant::Uniform, ..Default::default() };
        let out = fit_model(&toy(), &cfg).unwrap();
        assert_eq!(out.final_alpha, out.initial_alpha);
        assert_eq!(out.model.alpha, out.initial_alpha);
    }

    #[test]
    fn naive_variant_has_no_negative_class() {
        let cfg = TrainConfig { iterations: 2, variant: Variant::Naive, ..Default::default() };
        let out = fit_model(&toy(), &cfg).unwrap();
        assert_eq!(out.model.width(), 3);
        assert!(!out.model.label_space.is_augmented());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        assert!(fit_model(&toy(), &cfg).is_err());
        assert!(Variant::parse("partial").is_err());
    }
}
