//! Repeated-split evaluation with paired t-tests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, embed_maxmin, embed_mean};
use crate::data::{random_split, MiplDataset};
use crate::error::{Error, Result};
use crate::predictor::predict_bags;
use crate::trainer::{fit_model, TrainConfig, Variant};

/// Two-tailed 0.05 critical values of Student's t for df = 1..=30.
const T_CRIT_05: [f64; 30] = [
    12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281, 2.2010, 2.1788, 2.1604,
    2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739, 2.0687, 2.0639, 2.0595, 2.0555,
    2.0518, 2.0484, 2.0452, 2.0423,
];

/// Two-tailed 0.05 critical value. Beyond df 30 the df-30 value is used,
/// which is slightly conservative.
pub fn t_critical_05(df: usize) -> Option<f64> {
    (df >= 1).then(|| T_CRIT_05[df.min(30) - 1])
}

pub fn accuracy(preds: &[usize], truths: &[Option<usize>]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), found: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty prediction list".into()));
    }
    let mut hits = 0usize;
    for (i, (p, t)) in preds.iter().zip(truths).enumerate() {
        let t = t.ok_or_else(|| Error::InvalidDataset(format!("bag {i} has no true label")))?;
        hits += usize::from(*p == t);
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Serializes non-finite floats as strings so reports stay valid JSON.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    #[serde(with = "lossless_f64")]
    pub t: f64,
    pub df: usize,
    pub critical: f64,
    pub significant: bool,
    pub mean_difference: f64,
}

/// Paired two-tailed t-test on `a − b` at the 0.05 level.
///
/// With zero spread in the differences, `t` is `±∞` (or 0 when every
/// difference is zero) and the verdict is "significant iff the mean is
/// non-zero".
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs at least 2 runs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    let critical = t_critical_05(df).expect("df >= 1");
    let (t, significant) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, false)
        } else {
            (f64::INFINITY.copysign(mean), true)
        }
    } else {
        let t = mean * (n as f64).sqrt() / sd;
        (t, t.abs() > critical)
    };
    Ok(TTest { t, df, critical, significant, mean_difference: mean })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "miplgp")]
    Miplgp,
    #[serde(rename = "miplgp-uniform")]
    MiplgpUniform,
    #[serde(rename = "miplgp-naive")]
    MiplgpNaive,
    #[serde(rename = "plknn-mean")]
    PlknnMean,
    #[serde(rename = "plknn-maxmin")]
    PlknnMaxmin,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Self::Miplgp, Self::MiplgpUniform, Self::MiplgpNaive, Self::PlknnMean, Self::PlknnMaxmin];

    pub fn name(self) -> &'static str {
        match self {
            Self::Miplgp => "miplgp",
            Self::MiplgpUniform => "miplgp-uniform",
            Self::MiplgpNaive => "miplgp-naive",
            Self::PlknnMean => "plknn-mean",
            Self::PlknnMaxmin => "plknn-maxmin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::InvalidArgument(format!("unknown algorithm {s:?} (expected one of {})", names.join(", ")))
        })
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let out: Vec<Self> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(Self::parse).collect::<Result<_>>()?;
        if out.is_empty() {
            return Err(Error::InvalidArgument("no algorithms given".into()));
        }
        Ok(out)
    }

    fn variant(self) -> Option<Variant> {
        match self {
            Self::Miplgp => Some(Variant::Full),
            Self::MiplgpUniform => Some(Variant::Uniform),
            Self::MiplgpNaive => Some(Variant::Naive),
            Self::PlknnMean | Self::PlknnMaxmin => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub fraction: f64,
    pub base_seed: u64,
    pub train: TrainConfig,
    pub knn_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { runs: 10, fraction: 0.5, base_seed: 0, train: TrainConfig::default(), knn_k: baselines::DEFAULT_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub split_seed: u64,
    pub split_fingerprint: String,
    pub num_train_bags: usize,
    pub num_test_bags: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 when only one run exists.
    pub std: f64,
    pub std_defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: Algorithm,
    pub other: Algorithm,
    pub test: TTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub dataset_bags: usize,
    pub runs: Vec<RunRecord>,
    pub results: Vec<AlgorithmResult>,
    /// Paired tests of the first algorithm against each of the others.
    pub comparisons: Vec<Comparison>,
}

fn mean_std(xs: &[f64]) -> (f64, f64, bool) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0, false);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt(), true)
}

/// Accuracy of one algorithm trained on `train_set` and scored on `test_set`.
pub fn score_algorithm(
    algo: Algorithm,
    train_set: &MiplDataset,
    test_set: &MiplDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let truths: Vec<Option<usize>> = test_set.bags().iter().map(|b| b.true_label).collect();
    let preds = match algo.variant() {
        Some(variant) => {
            let tc = TrainConfig { variant, seed, ..cfg.train.clone() };
            let model = fit_model(train_set, &tc)?.model;
            predict_bags(&model, test_set.bags(), tc.mc_samples, seed)?
                .into_iter()
                .map(|p| p.predicted_label)
                .collect::<Vec<_>>()
        }
        None => {
            let embed = if algo == Algorithm::PlknnMean { embed_mean } else { embed_maxmin };
            let (tr, te) = (embed(train_set), embed(test_set));
            baselines::plknn_fit_predict(&tr, &te, cfg.knn_k.min(tr.len()))?
        }
    };
    accuracy(&preds, &truths)
}

/// Run `i` splits with seed `base_seed + i`; every algorithm sees the same split.
pub fn run_experiment(dataset: &MiplDataset, algorithms: &[Algorithm], cfg: &ExperimentConfig) -> Result<EvalReport> {
    if algorithms.is_empty() {
        return Err(Error::InvalidArgument("no algorithms given".into()));
    }
    if cfg.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    if let Some(b) = dataset.bags().iter().find(|b| b.true_label.is_none()) {
        return Err(Error::InvalidDataset(format!("bag {:?} has no true label", b.bag_id)));
    }
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut acc = vec![Vec::with_capacity(cfg.runs); algorithms.len()];
    for i in 0..cfg.runs {
        let seed = cfg.base_seed.wrapping_add(i as u64);
        let split = random_split(dataset, cfg.fraction, seed)?;
        let train_set = dataset.subset(&split.train_bag_ids)?;
        let test_set = dataset.subset(&split.test_bag_ids)?;
        for (a, &algo) in algorithms.iter().enumerate() {
            let score = score_algorithm(algo, &train_set, &test_set, cfg, seed)?;
            log::info!("run {i} {}: {score:.4}", algo.name());
            acc[a].push(score);
        }
        runs.push(RunRecord {
            run: i,
            split_seed: seed,
            split_fingerprint: split.fingerprint(),
            num_train_bags: split.train_bag_ids.len(),
            num_test_bags: split.test_bag_ids.len(),
        });
    }
    let results: Vec<AlgorithmResult> = algorithms
        .iter()
        .zip(acc)
        .map(|(&algorithm, accuracies)| {
            let (mean, std, std_defined) = mean_std(&accuracies);
            AlgorithmResult { algorithm, accuracies, mean, std, std_defined }
        })
        .collect();
    let comparisons = if cfg.runs >= 2 {
        results[1..]
            .iter()
            .map(|r| {
                Ok(Comparison {
                    reference: results[0].algorithm,
                    other: r.algorithm,
                    test: paired_t_test(&results[0].accuracies, &r.accuracies)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(EvalReport { config: cfg.clone(), dataset_bags: dataset.num_bags(), runs, results, comparisons })
}

impl EvalReport {
    pub fn result(&self, algo: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == algo)
    }

    pub fn comparison(&self, other: Algorithm) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.other == other)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// `run,split_seed,<algo>,...` with one row per run.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = self.results.iter().map(|r| r.algorithm.name()).collect();
        writeln!(w, "run,split_seed,{}", names.join(","))?;
        for (i, run) in self.runs.iter().enumerate() {
            let cells: Vec<String> = self.results.iter().map(|r| r.accuracies[i].to_string()).collect();
            writeln!(w, "{},{},{}", run.run, run.split_seed, cells.join(","))?;
        }
        Ok(())
    }

    /// Human-readable table with `mean±std` accuracies and verdicts.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>13}  {:>9}  {}", "algorithm", "accuracy", "t", "vs first");
        for (i, r) in self.results.iter().enumerate() {
            let acc = format!("{:.3}±{:.3}", r.mean, r.std);
            let (t, verdict) = match self.comparison(r.algorithm) {
                Some(c) if i > 0 => (
                    format!("{:.3}", c.test.t),
                    if c.test.significant { "significant" } else { "n.s." }.to_string(),
                ),
                _ => ("-".into(), if i == 0 { "reference".into() } else { "-".into() }),
            };
            let _ = writeln!(s, "{:<16} {:>13}  {:>9}  {}", r.algorithm.name(), acc, t, verdict);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let t = [Some(0), Some(1), Some(2), Some(1)];
        assert_eq!(accuracy(&[0, 1, 2, 1], &t).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0, 0], &t).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 0], &t).unwrap(), 0.75);
        assert!(accuracy(&[0], &[None]).is_err());
    }

    #[test]
    fn t_test_examples() {
        let a = [0.8, 0.7, 0.9];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.significant), (0.0, false));

        let r = paired_t_test(&[2.0; 5], &[1.0; 5]).unwrap();
        assert_eq!(r.t, f64::INFINITY);
        assert!(r.significant);

        let d = [0.05, 0.06, 0.04, 0.05, 0.05, 0.06, 0.04, 0.05, 0.06, 0.04];
        let r = paired_t_test(&d, &[0.0; 10]).unwrap();
        assert_eq!(r.critical, 2.2622);
        assert!(r.significant);
        assert!((r.t - 19.365).abs() < 1e-2, "{}", r.t);

        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn infinite_t_round_trips() {
        let t = TTest { t: f64::NEG_INFINITY, df: 4, critical: 2.7764, significant: true, mean_difference: -0.1 };
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"-inf\""));
        assert_eq!(serde_json::from_str::<TTest>(&s).unwrap(), t);
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()).unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert!(Algorithm::parse("svm").is_err());
        assert_eq!(Algorithm::parse_list("miplgp, plknn-mean").unwrap().len(), 2);
    }
}
