//! Shared fixtures for the benchmarks.

use miplgp_core::{
    build_instance_view, init_alpha, make_blobs, transform_targets, DirichletPrior, KernelParams, Mat, MiplDataset,
    Smoothness, SynthesisConfig, TransformedTargets,
};

/// Blob dataset with roughly `bags · 10` instances.
pub fn blobs(bags: usize) -> MiplDataset {
    let cfg = SynthesisConfig { num_bags: bags, min_instances: 5, max_instances: 15, seed: 0, ..SynthesisConfig::default() };
    make_blobs(5, 8, 6.0, &cfg).expect("valid blob config")
}

/// Features and initial targets of the instance view, as training sees them.
pub fn gp_problem(bags: usize) -> (Mat<f64>, TransformedTargets, KernelParams) {
    let view = build_instance_view(&blobs(bags)).expect("non-empty dataset");
    let alpha = init_alpha(&view, DirichletPrior::new(1e-4).unwrap());
    (view.features().clone(), transform_targets(&alpha), KernelParams::new(Smoothness::FiveHalves))
}
