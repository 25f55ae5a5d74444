//! Multi-instance partial-label learning with Gaussian processes.
//!
//! Bags of instances carry a candidate label set containing the true label
//! and some false positives. Training appends a negative class, gives every
//! instance a Dirichlet concentration over its bag's candidates, turns the
//! concentrations into log-space regression targets, and fits one exact GP
//! per class while re-weighting the concentrations from the GP's own
//! predictions. Test bags are labelled by the largest Monte-Carlo class
//! probability over their instances.
//!
//! ```no_run
//! use miplgp_core::{fit_model, make_blobs, predict_bags, SynthesisConfig, TrainConfig};
//!
//! let cfg = SynthesisConfig { num_bags: 40, ..SynthesisConfig::default() };
//! let data = make_blobs(3, 4, 6.0, &cfg)?;
//! let outcome = fit_model(&data, &TrainConfig { iterations: 20, ..TrainConfig::default() })?;
//! let preds = predict_bags(&outcome.model, data.bags(), 512, 0)?;
//! # Ok::<(), miplgp_core::Error>(())
//! ```

pub mod baselines;
pub mod cg;
pub mod data;
pub mod disambiguation;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod gp;
pub mod kernel;
pub mod model_io;
pub mod optim;
pub mod predictor;
pub mod rng;
pub mod synthesis;
pub mod trainer;

pub use faer::Mat;

pub use baselines::{embed_maxmin, embed_mean, plknn_fit_predict, EmbeddedDataset};
pub use cg::{CgOptions, CgSolution};
pub use data::{
    build_instance_view, build_raw_instance_view, random_split, standardize_features, Bag, InstanceView,
    LabelSpace, MiplDataset, Split, Standardizer,
};
pub use disambiguation::{
    init_alpha, sample_dirichlet, transform_targets, update_alpha, AlphaMatrix, DirichletPrior,
    TransformedTargets,
};
pub use error::{Error, Result};
pub use evaluation::{
    accuracy, paired_t_test, run_experiment, Algorithm, EvalReport, ExperimentConfig, TTest,
};
pub use format::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use gp::{GpModel, PredictiveDistribution};
pub use kernel::{KernelParams, Smoothness};
pub use model_io::{load_model, read_model, save_model, write_model};
pub use optim::{cosine_lr, AdamState};
pub use predictor::{aggregate_bag, mc_class_probs, predict_bags, truncate_negative, BagPrediction};
pub use synthesis::{load_base_pool, make_blobs, synthesize, BasePool, SynthesisConfig};
pub use trainer::{fit_model, train, AlphaSource, TrainConfig, TrainOutcome, TrainedModel, Variant};
