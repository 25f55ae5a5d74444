//! Bag-to-vector embeddings and a k-nearest-neighbour partial-label learner.

use rayon::prelude::*;

use crate::data::{Bag, MiplDataset};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 10;
const DISTANCE_GUARD: f64 = 1e-12;

/// One vector per bag, with the bag's supervision carried along.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<usize>>,
    pub true_labels: Vec<Option<usize>>,
}

impl EmbeddedDataset {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn embed(dataset: &MiplDataset, dim: usize, f: impl Fn(&Bag) -> Vec<f64>) -> EmbeddedDataset {
    let bags = dataset.bags();
    EmbeddedDataset {
        num_classes: dataset.num_classes(),
        dim,
        vectors: bags.iter().map(f).collect(),
        candidates: bags.iter().map(|b| b.candidate_labels.clone()).collect(),
        true_labels: bags.iter().map(|b| b.true_label).collect(),
    }
}

pub fn mean_vector(bag: &Bag) -> Vec<f64> {
    let d = bag.instances[0].len();
    let z = bag.len() as f64;
    (0..d).map(|k| bag.instances.iter().map(|x| x[k]).sum::<f64>() / z).collect()
}

/// Per-dimension max followed by per-dimension min.
pub fn maxmin_vector(bag: &Bag) -> Vec<f64> {
    let d = bag.instances[0].len();
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut lo = vec![f64::INFINITY; d];
    for x in &bag.instances {
        for k in 0..d {
            hi[k] = hi[k].max(x[k]);
            lo[k] = lo[k].min(x[k]);
        }
    }
    hi.extend(lo);
    hi
}

pub fn embed_mean(dataset: &MiplDataset) -> EmbeddedDataset {
    embed(dataset, dataset.feature_dim(), mean_vector)
}

pub fn embed_maxmin(dataset: &MiplDataset) -> EmbeddedDataset {
    embed(dataset, 2 * dataset.feature_dim(), maxmin_vector)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Label scores for one query: every neighbour spreads `1/(dist + 1e-12)`
/// evenly over its candidate set.
pub fn plknn_scores(train: &EmbeddedDataset, query: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<(f64, usize)> =
        train.vectors.iter().enumerate().map(|(i, v)| (distance(v, query), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut scores = vec![0.0; train.num_classes];
    for &(dist, i) in order.iter().take(k) {
        let cands = &train.candidates[i];
        let share = 1.0 / (dist + DISTANCE_GUARD) / cands.len() as f64;
        for &c in cands {
            scores[c] += share;
        }
    }
    scores
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn plknn_fit_predict(train: &EmbeddedDataset, test: &EmbeddedDataset, k: usize) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("PL-kNN needs a non-empty training set".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", train.len())));
    }
    if test.dim != train.dim {
        return Err(Error::DimensionMismatch { expected: train.dim, found: test.dim });
    }
    Ok(test.vectors.par_iter().map(|q| argmax_first(&plknn_scores(train, q, k))).collect())
}
