//! Synthesis of MIPL datasets from a labeled instance pool.
//!
//! Each bag gets a uniformly drawn size and ground-truth target class. A
//! fraction of its instances comes from that class, the rest from the union
//! of the reserved classes. The candidate set is the truth plus `r` false
//! positives drawn without replacement from the other target classes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Bag, MiplDataset};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Base-pool labels providing positive instances; position = MIPL class index.
    pub target_classes: Vec<usize>,
    /// Base-pool labels providing negative instances. May be empty.
    pub reserved_classes: Vec<usize>,
    pub num_bags: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Expected share of ground-truth instances in a bag, in (0, 1].
    pub positive_fraction: f64,
    /// Number of false-positive candidate labels `r`.
    pub num_false_positives: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    /// Desk-scale defaults: five targets, one reserved class, `r = 1`.
    fn default() -> Self {
        Self {
            target_classes: vec![0, 1, 2, 3, 4],
            reserved_classes: vec![5],
            num_bags: 100,
            min_instances: 5,
            max_instances: 15,
            positive_fraction: 0.2,
            num_false_positives: 1,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let q = self.target_classes.len();
        if q < 2 {
            return bad(format!("need at least 2 target classes, got {q}"));
        }
        let mut t = self.target_classes.clone();
        t.sort_unstable();
        t.dedup();
        if t.len() != q {
            return bad("target classes contain duplicates".into());
        }
        if self.reserved_classes.iter().any(|c| t.binary_search(c).is_ok()) {
            return bad("target and reserved classes overlap".into());
        }
        if self.num_false_positives >= q {
            return bad(format!(
                "r = {} false positives needs more than {q} target classes",
                self.num_false_positives
            ));
        }
        if self.num_bags == 0 {
            return bad("num_bags must be positive".into());
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad(format!(
                "invalid instance range [{}, {}]",
                self.min_instances, self.max_instances
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction <= 1.0) {
            return bad(format!("positive fraction {} not in (0, 1]", self.positive_fraction));
        }
        Ok(())
    }
}

/// Labeled instances to draw bags from.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePool {
    pub instances: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl BasePool {
    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, Vec::len)
    }

    fn rows_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Parses the base-pool CSV format: `label,f1,...,fd` per line, no header.
pub fn parse_base_pool(text: &str) -> Result<BasePool> {
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default();
        let label: usize = label
            .parse()
            .map_err(|_| err(format!("label {label:?} is not a non-negative integer")))?;
        let row = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("feature {f:?} is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        if row.is_empty() {
            return Err(err("row has no features".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite feature".into()));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(err(format!("expected {d} features, found {}", row.len())))
            }
            _ => {}
        }
        labels.push(label);
        instances.push(row);
    }
    if instances.is_empty() {
        return Err(Error::NoInstances);
    }
    Ok(BasePool { instances, labels })
}

pub fn load_base_pool(path: impl AsRef<Path>) -> Result<BasePool> {
    parse_base_pool(&std::fs::read_to_string(path)?)
}

/// Builds a dataset by sampling bags from `pool` as configured.
pub fn synthesize(pool: &BasePool, cfg: &SynthesisConfig) -> Result<MiplDataset> {
    cfg.validate()?;
    let d = pool.feature_dim();
    if d == 0 || pool.instances.len() != pool.labels.len() {
        return Err(Error::InvalidArgument("base pool is empty or inconsistent".into()));
    }
    let q = cfg.target_classes.len();
    let target_rows = cfg
        .target_classes
        .iter()
        .map(|&c| {
            let rows = pool.rows_of(c);
            if rows.is_empty() {
                Err(Error::InvalidArgument(format!("base pool has no instances of target class {c}")))
            } else {
                Ok(rows)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reserved_rows = Vec::new();
    for &c in &cfg.reserved_classes {
        let rows = pool.rows_of(c);
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "base pool has no instances of reserved class {c}"
            )));
        }
        reserved_rows.extend(rows);
    }
    let all_positive = reserved_rows.is_empty();
    if all_positive && cfg.positive_fraction < 1.0 {
        log::warn!(
            "no reserved classes: positive fraction {} ignored, bags hold only ground-truth instances",
            cfg.positive_fraction
        );
    }

    let mut rng = rng::seeded(cfg.seed);
    let mut bags = Vec::with_capacity(cfg.num_bags);
    let mut positives_total = 0usize;
    let mut instances_total = 0usize;
    for b in 0..cfg.num_bags {
        let z = rng.random_range(cfg.min_instances..=cfg.max_instances);
        let truth = rng.random_range(0..q);
        let n_pos = if all_positive {
            z
        } else {
            ((cfg.positive_fraction * z as f64).round() as usize).clamp(1, z)
        };
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(z);
        for _ in 0..n_pos {
            let &r = target_rows[truth].choose(&mut rng).expect("non-empty");
            rows.push(pool.instances[r].clone());
        }
        for _ in n_pos..z {
            let &r = reserved_rows.choose(&mut rng).expect("non-empty");
            rows.push(pool.instances[r].clone());
        }
        let others: Vec<usize> = (0..q).filter(|&c| c != truth).collect();
        let mut candidates: Vec<usize> = others
            .choose_multiple(&mut rng, cfg.num_false_positives)
            .copied()
            .collect();
        candidates.push(truth);
        candidates.sort_unstable();
        rows.shuffle(&mut rng);

        positives_total += n_pos;
        instances_total += z;
        bags.push(Bag {
            bag_id: format!("bag-{b:05}"),
            instances: rows,
            candidate_labels: candidates,
            true_label: Some(truth),
        });
    }

    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), json!("synthesize"));
    meta.insert("config".into(), serde_json::to_value(cfg)?);
    meta.insert("num_instances".into(), json!(instances_total));
    meta.insert(
        "positive_percentage".into(),
        json!(positives_total as f64 / instances_total as f64),
    );
    meta.insert("all_positive_bags".into(), json!(all_positive));
    // r + 1 = q: every candidate set is the full target set.
    meta.insert("uninformative".into(), json!(cfg.num_false_positives + 1 == q));
    MiplDataset::new(q, d, bags, meta)
}

/// Means of `q` unit Gaussians at the vertices of a regular simplex with all
/// pairwise distances equal to `separation`.
///
/// With `d >= q` the vertices are scaled axis vectors, which puts the origin
/// (where the background blob sits) at distance `separation/√2` from every
/// mean. Otherwise a centered simplex in the Helmert basis is used, needing
/// `q - 1` dimensions; with fewer, trailing coordinates are dropped and
/// distances shrink.
pub fn simplex_means(q: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    if d >= q {
        return (0..q).map(|i| (0..d).map(|k| if k == i { scale } else { 0.0 }).collect()).collect();
    }
    (0..q)
        .map(|i| {
            (0..d)
                .map(|k| {
                    // Helmert row k+1: 1/√(k'(k'+1)) on the first k' entries, -k'/√(..) at k'.
                    let kk = (k + 1) as f64;
                    let norm = (kk * (kk + 1.0)).sqrt();
                    if k + 1 >= q {
                        0.0
                    } else if i < k + 1 {
                        scale / norm
                    } else if i == k + 1 {
                        -scale * kk / norm
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Haar-random orthogonal `d × d` matrix (Gram-Schmidt on Gaussian rows).
pub fn random_rotation(d: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for u in &rows {
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, a)| *x -= dot * a);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a near-dependent draw is simply redrawn
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

/// Target means used by [`make_blobs`] for a given seed: [`simplex_means`]
/// under the seed's rotation.
pub fn blob_means(q: usize, d: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let rotation = random_rotation(d, &mut rng::seeded(rng::derive_seed_tagged(seed, "blob-rotation")));
    simplex_means(q, d, separation)
        .iter()
        .map(|m| rotation.iter().map(|u| u.iter().zip(m).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// Desk-scale generator: `q` target Gaussians on a simplex plus a background
/// Gaussian at the origin (reserved class `q`), fed through [`synthesize`].
///
/// The simplex is turned by a seed-derived random rotation so that no class
/// is tied to a coordinate axis. Distances to the origin and between means
/// are unchanged.
///
/// The target and reserved class lists of `cfg` are replaced by `0..q` and
/// `[q]`; every other setting is used as given.
pub fn make_blobs(q: usize, d: usize, separation: f64, cfg: &SynthesisConfig) -> Result<MiplDataset> {
    if q < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!("make_blobs needs q >= 2 and d >= 1 (q={q}, d={d})")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation} must be finite and >= 0")));
    }
    if d + 1 < q {
        log::warn!("d = {d} < q - 1 = {}: simplex means are truncated", q - 1);
    }
    let cfg = SynthesisConfig {
        target_classes: (0..q).collect(),
        reserved_classes: vec![q],
        ..cfg.clone()
    };
    let per_component = cfg.num_bags * cfg.max_instances;
    let mut centers = blob_means(q, d, separation, cfg.seed);
    centers.push(vec![0.0; d]);
    let mut pool_rng = rng::seeded(rng::derive_seed_tagged(cfg.seed, "blob-pool"));
    let mut instances = Vec::with_capacity(per_component * (q + 1));
    let mut labels = Vec::with_capacity(per_component * (q + 1));
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_component {
            let row = center
                .iter()
                .map(|&m| {
                    let e: f64 = StandardNormal.sample(&mut pool_rng);
                    m + e
                })
                .collect();
            instances.push(row);
            labels.push(label);
        }
    }
    let mut ds = synthesize(&BasePool { instances, labels }, &cfg)?;
    let meta = ds.metadata_mut();
    meta.insert("generator".into(), json!("make_blobs"));
    meta.insert("blobs".into(), json!({ "num_classes": q, "feature_dim": d, "separation": separation }));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> BasePool {
        // labels 0..5 are targets, 9 is background
        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for c in [0usize, 1, 2, 3, 4, 9] {
            for j in 0..20 {
                instances.push(vec![c as f64, j as f64]);
                labels.push(c);
            }
        }
        BasePool { instances, labels }
    }

    fn cfg(r: usize) -> SynthesisConfig {
        SynthesisConfig {
            target_classes: vec![0, 1, 2, 3, 4],
            reserved_classes: vec![9],
            num_bags: 200,
            min_instances: 5,
            max_instances: 12,
            positive_fraction: 0.2,
            num_false_positives: r,
            seed: 11,
        }
    }

    #[test]
    fn parse_pool_examples() {
        let p = parse_base_pool("3,0.5,1.0\n1,0.0,2.0").unwrap();
        assert_eq!(p.labels, vec![3, 1]);
        assert_eq!(p.feature_dim(), 2);
        assert!(matches!(parse_base_pool(""), Err(Error::NoInstances)));
        match parse_base_pool("0,1.0\n1,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_base_pool("0,1.0\n1,2.0,3.0"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_base_pool("-1,1.0"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn bags_respect_configuration() {
        let ds = synthesize(&pool(), &cfg(1)).unwrap();
        assert_eq!(ds.num_bags(), 200);
        for bag in ds.bags() {
            let t = bag.true_label.unwrap();
            assert!((5..=12).contains(&bag.len()));
            assert_eq!(bag.candidate_labels.len(), 2);
            assert!(bag.candidate_labels.contains(&t));
            // at least one truth instance; others come from the background only
            let truth_rows = bag.instances.iter().filter(|r| r[0] == t as f64).count();
            assert!(truth_rows >= 1);
            assert!(bag.instances.iter().all(|r| r[0] == t as f64 || r[0] == 9.0));
        }
    }

    #[test]
    fn zero_false_positives_gives_singletons() {
        let ds = synthesize(&pool(), &cfg(0)).unwrap();
        assert!(ds
            .bags()
            .iter()
            .all(|b| b.candidate_labels == vec![b.true_label.unwrap()]));
    }

    #[test]
    fn full_candidate_sets_are_flagged() {
        let ds = synthesize(&pool(), &cfg(4)).unwrap();
        assert!(ds.bags().iter().all(|b| b.candidate_labels == vec![0, 1, 2, 3, 4]));
        assert_eq!(ds.metadata()["uninformative"], json!(true));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(synthesize(&pool(), &cfg(5)).is_err());
        let mut c = cfg(1);
        c.reserved_classes = vec![2];
        assert!(synthesize(&pool(), &c).is_err());
        let mut c = cfg(1);
        c.target_classes = vec![0, 1, 7];
        assert!(synthesize(&pool(), &c).is_err());
    }

    #[test]
    fn no_reserved_classes_gives_all_positive_bags() {
        let mut c = cfg(1);
        c.reserved_classes.clear();
        let ds = synthesize(&pool(), &c).unwrap();
        for bag in ds.bags() {
            let t = bag.true_label.unwrap() as f64;
            assert!(bag.instances.iter().all(|r| r[0] == t));
        }
    }

    #[test]
    fn simplex_distances() {
        for (q, d) in [(2, 1), (3, 2), (5, 8), (5, 4), (5, 5)] {
            let m = simplex_means(q, d, 6.0);
            if d < q {
                let centroid: Vec<f64> = (0..d).map(|k| m.iter().map(|v| v[k]).sum::<f64>()).collect();
                assert!(centroid.iter().all(|c| c.abs() < 1e-12));
            } else {
                for v in &m {
                    let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    assert!((r - 6.0 / 2f64.sqrt()).abs() < 1e-12);
                }
            }
            for i in 0..q {
                for j in 0..i {
                    let dist: f64 =
                        m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!((dist - 6.0).abs() < 1e-12, "q={q} d={d} dist={dist}");
                }
            }
        }
    }

    #[test]
    fn rotation_is_orthogonal() {
        for d in [1, 3, 8] {
            let r = random_rotation(d, &mut rng::seeded(5));
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = r[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
        // no axis carries a whole mean
        let r = random_rotation(8, &mut rng::seeded(5));
        assert!(r.iter().all(|row| row.iter().all(|x| x.abs() < 0.99)));
    }

    #[test]
    fn blobs_shape_and_determinism() {
        let mut c = cfg(1);
        c.num_bags = 100;
        let a = make_blobs(5, 8, 6.0, &c).unwrap();
        assert_eq!(a.num_bags(), 100);
        assert_eq!(a.feature_dim(), 8);
        let b = make_blobs(5, 8, 6.0, &c).unwrap();
        assert_eq!(
            crate::format::dataset_to_string(&a).unwrap(),
            crate::format::dataset_to_string(&b).unwrap()
        );
    }
}
