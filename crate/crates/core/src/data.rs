//! Bags, candidate label sets, datasets, instance views and splits.
//!
//! Class indices are zero-based. When a label space is augmented, the
//! negative class sits at index `q`, so dropping the last column of any
//! `q + 1` wide matrix returns to the original label space.

use std::collections::{BTreeMap, HashSet};

use faer::Mat;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    num_classes: usize,
    augmented: bool,
}

impl LabelSpace {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "label space needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self { num_classes, augmented: false })
    }

    /// The same label space with the negative class appended.
    pub fn augmented(self) -> Self {
        Self { augmented: true, ..self }
    }

    /// Number of original classes `q`.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Number of output columns: `q + 1` when augmented, `q` otherwise.
    pub fn width(&self) -> usize {
        self.num_classes + usize::from(self.augmented)
    }

    pub fn negative_class(&self) -> Option<usize> {
        self.augmented.then_some(self.num_classes)
    }
}

/// A multi-instance bag with its bag-level candidate label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub bag_id: String,
    /// One row per instance.
    pub instances: Vec<Vec<f64>>,
    pub candidate_labels: Vec<usize>,
    /// Ground truth, for evaluation only. Training never reads it.
    pub true_label: Option<usize>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn validate(&self, num_classes: usize, feature_dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDataset(format!("bag {:?}: {msg}", self.bag_id)));
        if self.instances.is_empty() {
            return bad("bag has no instances".into());
        }
        for (j, row) in self.instances.iter().enumerate() {
            if row.len() != feature_dim {
                return bad(format!(
                    "instance {j} has {} features, expected {feature_dim}",
                    row.len()
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("instance {j} has a non-finite feature"));
            }
        }
        if self.candidate_labels.is_empty() {
            return bad("empty candidate label set".into());
        }
        if let Some(&c) = self.candidate_labels.iter().find(|&&c| c >= num_classes) {
            return bad(format!("candidate label {c} outside 0..{num_classes}"));
        }
        if let Some(t) = self.true_label {
            if !self.candidate_labels.contains(&t) {
                return bad(format!("true label {t} is not a candidate"));
            }
        }
        Ok(())
    }
}

/// A validated multi-instance partial-label dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MiplDataset {
    label_space: LabelSpace,
    feature_dim: usize,
    bags: Vec<Bag>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl MiplDataset {
    /// Validates and builds a dataset. Candidate lists are sorted and deduplicated.
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        mut bags: Vec<Bag>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        let label_space = LabelSpace::new(num_classes)?;
        if feature_dim == 0 {
            return Err(Error::InvalidDataset("feature_dim must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(bags.len());
        for bag in &mut bags {
            bag.candidate_labels.sort_unstable();
            bag.candidate_labels.dedup();
            bag.validate(num_classes, feature_dim)?;
            if !seen.insert(bag.bag_id.clone()) {
                return Err(Error::InvalidDataset(format!("duplicate bag id {:?}", bag.bag_id)));
            }
        }
        Ok(Self { label_space, feature_dim, bags, metadata })
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    /// Total instance count `n`.
    pub fn num_instances(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, serde_json::Value> {
        &mut self.metadata
    }

    /// The bags whose ids are listed, in dataset order.
    pub fn subset(&self, bag_ids: &[String]) -> Result<MiplDataset> {
        let wanted: HashSet<&str> = bag_ids.iter().map(String::as_str).collect();
        let bags: Vec<Bag> = self
            .bags
            .iter()
            .filter(|b| wanted.contains(b.bag_id.as_str()))
            .cloned()
            .collect();
        if bags.len() != wanted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} of {} requested bag ids are not in the dataset",
                wanted.len() - bags.len(),
                wanted.len()
            )));
        }
        Ok(MiplDataset {
            label_space: self.label_space,
            feature_dim: self.feature_dim,
            bags,
            metadata: self.metadata.clone(),
        })
    }
}

/// Instances of a dataset flattened into one matrix, each row carrying its
/// bag's candidate mask.
#[derive(Clone, Debug)]
pub struct InstanceView {
    label_space: LabelSpace,
    features: Mat<f64>,
    bag_index: Vec<usize>,
    /// Row-major `n × width` candidate mask.
    masks: Vec<bool>,
}

/// Flattens the dataset and propagates each bag's candidate set, plus the
/// negative class, to all of its instances.
pub fn build_instance_view(dataset: &MiplDataset) -> Result<InstanceView> {
    InstanceView::from_bags(dataset.bags(), dataset.label_space().augmented(), dataset.feature_dim())
}

/// Like [`build_instance_view`] but without the negative class: every
/// instance inherits the raw bag candidate set.
pub fn build_raw_instance_view(dataset: &MiplDataset) -> Result<InstanceView> {
    InstanceView::from_bags(dataset.bags(), dataset.label_space(), dataset.feature_dim())
}

impl InstanceView {
    pub fn from_bags(bags: &[Bag], label_space: LabelSpace, feature_dim: usize) -> Result<Self> {
        let n: usize = bags.iter().map(Bag::len).sum();
        let width = label_space.width();
        let mut features = Mat::<f64>::zeros(n, feature_dim);
        let mut bag_index = Vec::with_capacity(n);
        let mut masks = vec![false; n * width];
        let mut row = 0;
        for (b, bag) in bags.iter().enumerate() {
            if bag.candidate_labels.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "bag {:?} has an empty candidate set",
                    bag.bag_id
                )));
            }
            let mut bag_mask = vec![false; width];
            for &c in &bag.candidate_labels {
                if c >= label_space.num_classes() {
                    return Err(Error::InvalidDataset(format!(
                        "bag {:?}: candidate {c} out of range",
                        bag.bag_id
                    )));
                }
                bag_mask[c] = true;
            }
            if let Some(neg) = label_space.negative_class() {
                bag_mask[neg] = true;
            }
            for inst in &bag.instances {
                if inst.len() != feature_dim {
                    return Err(Error::DimensionMismatch { expected: feature_dim, found: inst.len() });
                }
                for (k, &v) in inst.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::InvalidDataset(format!(
                            "bag {:?} has a non-finite feature",
                            bag.bag_id
                        )));
                    }
                    features[(row, k)] = v;
                }
                masks[row * width..(row + 1) * width].copy_from_slice(&bag_mask);
                bag_index.push(b);
                row += 1;
            }
        }
        Ok(Self { label_space, features, bag_index, masks })
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn num_rows(&self) -> usize {
        self.bag_index.len()
    }

    pub fn width(&self) -> usize {
        self.label_space.width()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Mat<f64> {
        &self.features
    }

    pub fn bag_index(&self) -> &[usize] {
        &self.bag_index
    }

    pub fn mask(&self, row: usize) -> &[bool] {
        let w = self.width();
        &self.masks[row * w..(row + 1) * w]
    }

    /// `|ỹ|` for a row.
    pub fn candidate_count(&self, row: usize) -> usize {
        self.mask(row).iter().filter(|&&m| m).count()
    }

    /// Rows belonging to bag `b`, copied out as instance vectors.
    pub fn bag_rows(&self, b: usize) -> Vec<Vec<f64>> {
        self.bag_index
            .iter()
            .enumerate()
            .filter(|&(_, &bi)| bi == b)
            .map(|(i, _)| (0..self.feature_dim()).map(|k| self.features[(i, k)]).collect())
            .collect()
    }
}

/// Per-dimension standardization statistics (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Mat<f64>) -> Self {
        let (n, d) = (x.nrows(), x.ncols());
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        if n == 0 {
            return Self { mean, std };
        }
        for k in 0..d {
            let m = (0..n).map(|i| x[(i, k)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[(i, k)] - m).powi(2)).sum::<f64>() / n as f64;
            mean[k] = m;
            std[k] = var.sqrt();
        }
        Self { mean, std }
    }

    /// Zero-variance dimensions pass through unscaled.
    pub fn apply(&self, x: &mut Mat<f64>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), found: x.ncols() });
        }
        for k in 0..x.ncols() {
            if self.std[k] > 0.0 {
                for i in 0..x.nrows() {
                    x[(i, k)] = (x[(i, k)] - self.mean[k]) / self.std[k];
                }
            }
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (k, v) in row.iter_mut().enumerate() {
            if self.std[k] > 0.0 {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
    }
}

/// Standardizes a view. Without `stats`, statistics are computed from the
/// view itself (the training split); test views pass the training stats.
pub fn standardize_features(
    mut view: InstanceView,
    stats: Option<&Standardizer>,
) -> Result<(InstanceView, Standardizer)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => Standardizer::fit(&view.features),
    };
    stats.apply(&mut view.features)?;
    Ok((view, stats))
}

/// A bag-level train/test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_bag_ids: Vec<String>,
    pub test_bag_ids: Vec<String>,
}

impl Split {
    /// Short content hash used to show that runs were paired on the same split.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.train_bag_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        h.update(b"|");
        for id in &self.test_bag_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Seeded random bag-level split. The train side gets `round(fraction × m)`
/// bags (halves round up); both id lists keep dataset order.
pub fn random_split(dataset: &MiplDataset, fraction: f64, seed: u64) -> Result<Split> {
    let m = dataset.num_bags();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bags to split, got {m}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n_train = (fraction * m as f64 + 0.5).floor() as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} leaves one side empty for {m} bags"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut is_train = vec![false; m];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(m - n_train));
    for (bag, &t) in dataset.bags().iter().zip(&is_train) {
        if t {
            train.push(bag.bag_id.clone());
        } else {
            test.push(bag.bag_id.clone());
        }
    }
    Ok(Split { seed, train_bag_ids: train, test_bag_ids: test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(id: &str, rows: Vec<Vec<f64>>, cands: Vec<usize>) -> Bag {
        Bag { bag_id: id.into(), instances: rows, candidate_labels: cands, true_label: None }
    }

    fn toy(m: usize) -> MiplDataset {
        let bags = (0..m)
            .map(|i| bag(&format!("b{i}"), vec![vec![i as f64, 1.0]], vec![i % 3]))
            .collect();
        MiplDataset::new(3, 2, bags, BTreeMap::new()).unwrap()
    }

    #[test]
    fn view_propagates_candidates_plus_negative() {
        let ds = MiplDataset::new(
            5,
            1,
            vec![bag("a", vec![vec![1.0], vec![2.0]], vec![3, 0])],
            BTreeMap::new(),
        )
        .unwrap();
        let view = build_instance_view(&ds).unwrap();
        assert_eq!(view.width(), 6);
        for i in 0..2 {
            assert_eq!(view.mask(i), &[true, false, false, true, false, true]);
            assert_eq!(view.candidate_count(i), 3);
        }
    }

    #[test]
    fn view_rows_and_bag_index() {
        let ds = MiplDataset::new(
            2,
            1,
            vec![
                bag("a", vec![vec![1.0], vec![2.0]], vec![0]),
                bag("b", vec![vec![3.0], vec![4.0], vec![5.0]], vec![1]),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let view = build_instance_view(&ds).unwrap();
        assert_eq!(view.num_rows(), 5);
        assert_eq!(view.bag_index(), &[0, 0, 1, 1, 1]);
        assert_eq!(view.bag_rows(1), vec![vec![3.0], vec![4.0], vec![5.0]]);

        let raw = build_raw_instance_view(&ds).unwrap();
        assert_eq!(raw.width(), 2);
        assert_eq!(raw.mask(0), &[true, false]);
    }

    #[test]
    fn rejects_non_finite_and_empty_candidates() {
        let r = MiplDataset::new(2, 1, vec![bag("a", vec![vec![f64::NAN]], vec![0])], BTreeMap::new());
        assert!(matches!(r, Err(Error::InvalidDataset(_))));
        let r = MiplDataset::new(2, 1, vec![bag("a", vec![vec![0.0]], vec![])], BTreeMap::new());
        assert!(matches!(r, Err(Error::InvalidDataset(_))));
        let bad = vec![bag("a", vec![vec![f64::INFINITY]], vec![0])];
        let ls = LabelSpace::new(2).unwrap().augmented();
        assert!(InstanceView::from_bags(&bad, ls, 1).is_err());
        let bad = vec![bag("a", vec![vec![0.0]], vec![])];
        assert!(InstanceView::from_bags(&bad, ls, 1).is_err());
    }

    #[test]
    fn rejects_true_label_outside_candidates_and_duplicate_ids() {
        let mut b = bag("a", vec![vec![0.0]], vec![0]);
        b.true_label = Some(1);
        assert!(MiplDataset::new(2, 1, vec![b], BTreeMap::new()).is_err());
        let r = MiplDataset::new(
            2,
            1,
            vec![bag("a", vec![vec![0.0]], vec![0]), bag("a", vec![vec![1.0]], vec![1])],
            BTreeMap::new(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn standardization_two_point_column() {
        let mut x = Mat::<f64>::zeros(2, 2);
        x[(0, 0)] = 1.0;
        x[(1, 0)] = 3.0;
        x[(0, 1)] = 5.0;
        x[(1, 1)] = 5.0;
        let stats = Standardizer::fit(&x);
        assert_eq!(stats.mean, vec![2.0, 5.0]);
        assert_eq!(stats.std, vec![1.0, 0.0]);
        stats.apply(&mut x).unwrap();
        assert_eq!((x[(0, 0)], x[(1, 0)]), (-1.0, 1.0));
        // constant column passes through unscaled
        assert_eq!((x[(0, 1)], x[(1, 1)]), (5.0, 5.0));

        let mut test = vec![4.0, 7.0];
        stats.apply_row(&mut test);
        assert_eq!(test, vec![2.0, 7.0]);
    }

    #[test]
    fn split_sizes_and_rounding() {
        let s = random_split(&toy(500), 0.5, 1).unwrap();
        assert_eq!((s.train_bag_ids.len(), s.test_bag_ids.len()), (250, 250));
        let s = random_split(&toy(3), 0.5, 1).unwrap();
        assert_eq!((s.train_bag_ids.len(), s.test_bag_ids.len()), (2, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = toy(20);
        let a = random_split(&ds, 0.5, 42).unwrap();
        assert_eq!(a, random_split(&ds, 0.5, 42).unwrap());
        let all: HashSet<_> = a.train_bag_ids.iter().chain(&a.test_bag_ids).collect();
        assert_eq!(all.len(), 20);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(random_split(&toy(2), 0.1, 0).is_err());
        assert!(random_split(&toy(5), 1.0, 0).is_err());
        assert!(random_split(&toy(1), 0.5, 0).is_err());
    }

    #[test]
    fn distinct_seeds_give_distinct_splits() {
        let ds = toy(4);
        let distinct: HashSet<_> =
            (0..100).map(|s| random_split(&ds, 0.5, s).unwrap().train_bag_ids).collect();
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn subset_keeps_dataset_order() {
        let ds = toy(5);
        let sub = ds.subset(&["b3".into(), "b1".into()]).unwrap();
        let ids: Vec<_> = sub.bags().iter().map(|b| b.bag_id.as_str()).collect();
        assert_eq!(ids, ["b1", "b3"]);
        assert!(ds.subset(&["zz".into()]).is_err());
    }
}
