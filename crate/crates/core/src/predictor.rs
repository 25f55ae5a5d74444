//! Bag-level prediction.
//!
//! Per test instance, `E[θ]` is estimated by sampling the latent outputs
//! independently per class, pushing each joint draw through a softmax and
//! averaging. The negative column is then dropped (without renormalizing,
//! since the bag label is an argmax) and the bag takes the class of its
//! single largest instance-class entry.

use std::io::Write;

use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Bag, LabelSpace};
use crate::error::{Error, Result};
use crate::gp::PredictiveDistribution;
use crate::rng;
use crate::trainer::TrainedModel;

#[derive(Clone, Debug, PartialEq)]
pub struct BagPrediction {
    pub bag_id: String,
    pub predicted_label: usize,
    pub true_label: Option<usize>,
    /// `z × width` expected class probabilities, before truncation.
    pub instance_probs: Vec<Vec<f64>>,
    pub winning_instance: usize,
}

fn softmax_into(f: &[f64], out: &mut [f64]) {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(f) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Monte-Carlo `E[softmax(f)]` for `f_c ~ N(mean_c, var_c)` independently.
pub fn mc_expected_probs(mean: &[f64], variance: &[f64], samples: usize, seed: u64) -> Vec<f64> {
    let w = mean.len();
    let sd: Vec<f64> = variance.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut rng = rng::seeded(seed);
    let mut f = vec![0.0; w];
    let mut p = vec![0.0; w];
    let mut acc = vec![0.0; w];
    for _ in 0..samples.max(1) {
        for c in 0..w {
            let z: f64 = StandardNormal.sample(&mut rng);
            f[c] = mean[c] + sd[c] * z;
        }
        softmax_into(&f, &mut p);
        for c in 0..w {
            acc[c] += p[c];
        }
    }
    let s = samples.max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= s);
    acc
}

/// [`mc_expected_probs`] for every row of `pred`; row `i` uses the seed
/// derived from `(seed, i)`.
pub fn mc_class_probs(pred: &PredictiveDistribution, samples: usize, seed: u64) -> Mat<f64> {
    let (n, w) = (pred.nrows(), pred.width());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let m: Vec<f64> = (0..w).map(|c| pred.mean[(i, c)]).collect();
            let v: Vec<f64> = (0..w).map(|c| pred.variance[(i, c)]).collect();
            mc_expected_probs(&m, &v, samples, rng::derive_seed(seed, &[i as u64]))
        })
        .collect();
    Mat::from_fn(n, w, |i, c| rows[i][c])
}

/// Drops the negative-class column when `augmented`.
pub fn truncate_negative(theta: &[Vec<f64>], augmented: bool) -> Vec<Vec<f64>> {
    theta
        .iter()
        .map(|row| if augmented { row[..row.len() - 1].to_vec() } else { row.clone() })
        .collect()
}

/// `(class, row)` of the largest entry; ties go to the first in row-major order.
pub fn aggregate_bag(theta_bag: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for (r, row) in theta_bag.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = (c, r);
            }
        }
    }
    best
}

/// Scores every bag. Instance `j` of bag `b` draws its samples from the seed
/// derived from `(seed, b, j)`.
pub fn predict_bags(model: &TrainedModel, bags: &[Bag], samples: usize, seed: u64) -> Result<Vec<BagPrediction>> {
    if bags.is_empty() {
        return Ok(Vec::new());
    }
    let d = model.feature_dim();
    let n: usize = bags.iter().map(Bag::len).sum();
    let mut x = Mat::<f64>::zeros(n, d);
    let mut row = 0;
    for bag in bags {
        for inst in &bag.instances {
            if inst.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: inst.len() });
            }
            let mut v = inst.clone();
            if let Some(s) = &model.standardizer {
                s.apply_row(&mut v);
            }
            for (k, val) in v.into_iter().enumerate() {
                x[(row, k)] = val;
            }
            row += 1;
        }
    }
    let pred = model.gp.predict(&x)?;
    let w = pred.width();
    let augmented = model.label_space.is_augmented();

    let mut offsets = Vec::with_capacity(bags.len());
    let mut start = 0;
    for bag in bags {
        offsets.push(start);
        start += bag.len();
    }
    bags.par_iter()
        .zip(offsets.par_iter())
        .enumerate()
        .map(|(b, (bag, &off))| {
            let probs: Vec<Vec<f64>> = (0..bag.len())
                .map(|j| {
                    let m: Vec<f64> = (0..w).map(|c| pred.mean[(off + j, c)]).collect();
                    let v: Vec<f64> = (0..w).map(|c| pred.variance[(off + j, c)]).collect();
                    mc_expected_probs(&m, &v, samples, rng::derive_seed(seed, &[b as u64, j as u64]))
                })
                .collect();
            let (predicted_label, winning_instance) = aggregate_bag(&truncate_negative(&probs, augmented));
            Ok(BagPrediction {
                bag_id: bag.bag_id.clone(),
                predicted_label,
                true_label: bag.true_label,
                instance_probs: probs,
                winning_instance,
            })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `bag_id,predicted_label,true_label,theta_0,…` with the winning instance's
/// θ before truncation; an augmented space adds a final `theta_neg` column.
pub fn write_predictions_csv<W: Write>(mut w: W, preds: &[BagPrediction], labels: LabelSpace) -> Result<()> {
    let mut header = String::from("bag_id,predicted_label,true_label");
    for c in 0..labels.num_classes() {
        header.push_str(&format!(",theta_{c}"));
    }
    if labels.is_augmented() {
        header.push_str(",theta_neg");
    }
    writeln!(w, "{header}")?;
    for p in preds {
        let truth = p.true_label.map(|t| t.to_string()).unwrap_or_default();
        let mut line = format!("{},{},{}", csv_field(&p.bag_id), p.predicted_label, truth);
        for v in &p.instance_probs[p.winning_instance] {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_means_without_variance_are_uniform() {
        let p = mc_expected_probs(&[0.3; 4], &[0.0; 4], 10, 1);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn large_gap_is_one_hot() {
        let p = mc_expected_probs(&[800.0, 0.0, 0.0], &[0.0; 3], 3, 1);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rows_sum_to_one() {
        let p = mc_expected_probs(&[1.0, -0.5, 0.2], &[2.0, 0.3, 1.0], 512, 9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_negative(&[vec![0.2, 0.3, 0.5]], true), vec![vec![0.2, 0.3]]);
        assert_eq!(truncate_negative(&[vec![0.2, 0.3, 0.5]], false), vec![vec![0.2, 0.3, 0.5]]);
        let t = truncate_negative(&[vec![0.01, 0.01, 0.98]], true);
        assert_eq!(aggregate_bag(&t), (0, 0));
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_bag(&[vec![0.1, 0.7, 0.2], vec![0.6, 0.3, 0.1]]), (1, 0));
        assert_eq!(aggregate_bag(&[vec![0.5, 0.5], vec![0.5, 0.5]]), (0, 0));
        assert_eq!(aggregate_bag(&[vec![0.1, 0.2, 0.7]]), (2, 0));
        assert_eq!(aggregate_bag(&[vec![0.1, 0.2], vec![0.1, 0.9]]), (1, 1));
    }

    #[test]
    fn csv_quotes_awkward_ids() {
        let p = BagPrediction {
            bag_id: "a,b".into(),
            predicted_label: 1,
            true_label: None,
            instance_probs: vec![vec![0.25, 0.75]],
            winning_instance: 0,
        };
        let mut out = Vec::new();
        write_predictions_csv(&mut out, &[p], LabelSpace::new(2).unwrap()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bag_id,predicted_label,true_label,theta_0,theta_1\n\"a,b\",1,,0.25,0.75\n");
        let mut out = Vec::new();
        write_predictions_csv(&mut out, &[], LabelSpace::new(2).unwrap().augmented()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bag_id,predicted_label,true_label,theta_0,theta_1,theta_neg\n");
    }
}
