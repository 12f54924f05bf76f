//! 5×2 cross-validation, accuracy and the 5×2-CV paired t-test.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{five_by_two_folds, LabeledDataset, Preprocessing};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, SCHEMA_VERSION};
use crate::seed::{derive_seed, Stream};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
const BETA_CF_TOL: f64 = 1e-10;
const BETA_CF_MAX_ITER: usize = 500;

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Which half trains: `A` trains on the first half, `B` on the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fold {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1 to 5.
    pub repetition: usize,
    pub fold: Fold,
    pub validation_accuracy: f64,
    pub training_accuracy: f64,
    pub learners: usize,
    /// Kept out of the JSON report so reports stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub model: ModelSpec,
    pub pca_components: Option<usize>,
    pub rows: usize,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub schema: u32,
    pub config: CrossValConfig,
    pub master_seed: u64,
    /// Ordered `[rep 1 A, rep 1 B, rep 2 A, ...]`.
    pub per_fold: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over the 10 validation accuracies.
    pub std_accuracy: f64,
}

impl CrossValReport {
    pub fn validation_accuracies(&self) -> Vec<f64> {
        self.per_fold.iter().map(|f| f.validation_accuracy).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fold assignments depend on `master_seed` alone, so two configurations run
/// with the same seed see identical splits. Preprocessing is refit inside every
/// fold on its training half.
pub fn run_crossval(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    master_seed: u64,
    pca_components: Option<usize>,
) -> Result<CrossValReport> {
    spec.validate()?;
    let splits = five_by_two_folds(dataset.len(), derive_seed(master_seed, Stream::Folds, 0))?;
    let jobs: Vec<(usize, Fold, &[usize], &[usize])> = splits
        .iter()
        .enumerate()
        .flat_map(|(r, s)| {
            [(r + 1, Fold::A, &s.first[..], &s.second[..]), (r + 1, Fold::B, &s.second[..], &s.first[..])]
        })
        .collect();

    let per_fold = jobs
        .par_iter()
        .enumerate()
        .map(|(job, &(repetition, fold, train_idx, val_idx))| {
            let start = Instant::now();
            let held_out: HashSet<usize> = val_idx.iter().copied().collect();
            assert!(
                train_idx.iter().all(|i| !held_out.contains(i)),
                "training and validation folds overlap"
            );
            let train_raw = dataset.select(train_idx);
            let val_raw = dataset.select(val_idx);
            let prep = Preprocessing::fit(&train_raw, pca_components)?;
            let train = prep.apply(&train_raw)?;
            let val = prep.apply(&val_raw)?;
            let model = spec.train(&train, derive_seed(master_seed, Stream::Train, job as u64))?;
            Ok(FoldResult {
                repetition,
                fold,
                validation_accuracy: accuracy(&model.predictions(&val)?, val.labels())?,
                training_accuracy: accuracy(&model.predictions(&train)?, train.labels())?,
                learners: model.learner_count(),
                wall_time_secs: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean_accuracy, std_accuracy) =
        mean_and_std(&per_fold.iter().map(|f| f.validation_accuracy).collect::<Vec<_>>());
    Ok(CrossValReport {
        schema: SCHEMA_VERSION,
        config: CrossValConfig {
            model: *spec,
            pca_components,
            rows: dataset.len(),
            features: dataset.num_features(),
        },
        master_seed,
        per_fold,
        mean_accuracy,
        std_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    #[serde(with = "extended_f64")]
    pub t_statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: u32,
    pub significant: bool,
    /// Nonzero first difference with zero pooled variance.
    pub degenerate: bool,
}

/// JSON has no infinities; they are written as the strings `"inf"` and `"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

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

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

/// 5×2-CV paired t-test on two accuracy vectors ordered
/// `[rep 1 A, rep 1 B, rep 2 A, ...]`, paired by position.
///
/// `t = d₁₁ / sqrt(Σᵣ s²ᵣ / 5)` where `d₁₁` is the first difference and `s²ᵣ`
/// the variance of repetition r's two differences; two-sided p from Student's
/// t with 5 degrees of freedom.
pub fn paired_t_test(acc_a: &[f64], acc_b: &[f64]) -> Result<TTestResult> {
    if acc_a.len() != 10 || acc_b.len() != 10 {
        return Err(Error::invalid(format!(
            "5×2 t-test needs 10 paired values, got {} and {}",
            acc_a.len(),
            acc_b.len()
        )));
    }
    if let Some(bad) = acc_a.iter().chain(acc_b).find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite accuracy {bad}")));
    }
    let diff: Vec<f64> = acc_a.iter().zip(acc_b).map(|(a, b)| a - b).collect();
    let pooled: f64 = diff
        .chunks(2)
        .map(|p| {
            let mean = (p[0] + p[1]) / 2.0;
            (p[0] - mean).powi(2) + (p[1] - mean).powi(2)
        })
        .sum::<f64>()
        / 5.0;
    let numerator = diff[0];
    let dof = 5;
    let (t, p, degenerate) = if pooled == 0.0 {
        if numerator == 0.0 {
            (0.0, 1.0, false)
        } else {
            (numerator.signum() * f64::INFINITY, 0.0, true)
        }
    } else {
        let t = numerator / pooled.sqrt();
        (t, student_t_two_sided_p(t, dof as f64), false)
    };
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        degrees_of_freedom: dof,
        significant: p < SIGNIFICANCE_LEVEL,
        degenerate,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `nu` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, nu: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(nu / (nu + t * t), nu / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `ln Γ(x)` for `x > 0`, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via the Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_CF_TOL {
            break;
        }
    }
    h
}

/// Per-fold accuracies as CSV with columns `repetition,fold,model,split,accuracy`.
pub fn folds_csv(reports: &[&CrossValReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidState(format!("csv encoding failed: {e}"));
    w.write_record(["repetition", "fold", "model", "split", "accuracy"]).map_err(csv_err)?;
    for r in reports {
        let model = r.config.model.to_string();
        for f in &r.per_fold {
            let fold = match f.fold {
                Fold::A => "A",
                Fold::B => "B",
            };
            for (split, acc) in [("validation", f.validation_accuracy), ("training", f.training_accuracy)] {
                w.write_record([f.repetition.to_string(), fold.to_string(), model.clone(), split.to_string(), acc.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidState(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidState(e.to_string()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    fn statrs_p(t: f64) -> f64 {
        2.0 * StudentsT::new(0.0, 1.0, 5.0).unwrap().sf(t.abs())
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(2.5) - (0.75 * std::f64::consts::PI.sqrt()).ln()).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_against_closed_forms() {
        for x in [0.01, 0.2, 0.5, 0.77, 0.99] {
            // I_x(1, b) = 1 − (1 − x)^b and I_x(a, 1) = x^a.
            assert!((regularized_incomplete_beta(x, 1.0, 3.0) - (1.0 - (1.0 - x).powi(3))).abs() < 1e-12);
            assert!((regularized_incomplete_beta(x, 2.5, 1.0) - x.powf(2.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn t_test_identical_vectors() {
        let a = [0.8, 0.7, 0.9, 0.85, 0.8, 0.75, 0.9, 0.6, 0.7, 0.8];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t_statistic, r.p_value, r.significant, r.degenerate), (0.0, 1.0, false, false));
    }

    #[test]
    fn t_test_constant_difference_is_degenerate() {
        let b = [0.5; 10];
        let a: Vec<f64> = b.iter().map(|v| v + 0.1).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<TTestResult>(&json).unwrap(), r);
    }

    #[test]
    fn t_test_hand_built() {
        // Differences per repetition: (0.1, 0.0), (0.05, 0.05), (0.0, 0.1), (0.02, 0.04), (0.1, 0.06).
        let d = [0.1, 0.0, 0.05, 0.05, 0.0, 0.1, 0.02, 0.04, 0.1, 0.06];
        let b = [0.5; 10];
        let a: Vec<f64> = b.iter().zip(&d).map(|(x, y)| x + y).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let s2: f64 = (0..5)
            .map(|i| {
                let m = (diffs[2 * i] + diffs[2 * i + 1]) / 2.0;
                (diffs[2 * i] - m).powi(2) + (diffs[2 * i + 1] - m).powi(2)
            })
            .sum();
        let t = diffs[0] / (s2 / 5.0).sqrt();
        assert!((r.t_statistic - t).abs() < 1e-12);
        assert!((r.p_value - statrs_p(t)).abs() < 1e-6);
        assert_eq!(r.degrees_of_freedom, 5);
    }

    #[test]
    fn t_test_rejects_wrong_lengths() {
        assert!(paired_t_test(&[0.5; 9], &[0.5; 10]).is_err());
        assert!(paired_t_test(&[0.5; 10], &[0.5; 11]).is_err());
    }

    #[test]
    fn p_values_match_reference_distribution() {
        let mut rng = rng_from_seed(3);
        for _ in 0..2000 {
            let t: f64 = rng.random_range(-30.0..30.0);
            let p = student_t_two_sided_p(t, 5.0);
            assert!((p - statrs_p(t)).abs() < 1e-9, "t={t} {p} {}", statrs_p(t));
        }
    }

    proptest! {
        #[test]
        fn t_test_symmetry(a in proptest::collection::vec(0.0f64..1.0, 10), b in proptest::collection::vec(0.0f64..1.0, 10)) {
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert_eq!(ab.significant, ab.p_value < 0.05);
        }
    }

    fn blobs(m: usize, seed: u64) -> LabeledDataset {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..m {
            let y = (i % 2) as u8;
            let c = if y == 1 { 1.0 } else { -1.0 };
            rows.push((0..3).map(|_| c + rng.random_range(-0.8..0.8)).collect());
            labels.push(y);
        }
        LabeledDataset::new(rows, labels).unwrap()
    }

    #[test]
    fn crossval_structure_and_consistency() {
        let d = blobs(41, 1);
        let spec = ModelSpec::single(1, 40);
        let r = run_crossval(&spec, &d, 9, Some(2)).unwrap();
        assert_eq!(r.per_fold.len(), 10);
        for (i, f) in r.per_fold.iter().enumerate() {
            assert_eq!(f.repetition, i / 2 + 1);
            assert_eq!(f.fold, if i % 2 == 0 { Fold::A } else { Fold::B });
        }
        let (mean, std) = mean_and_std(&r.validation_accuracies());
        assert!((mean - r.mean_accuracy).abs() < 1e-12);
        assert!((std - r.std_accuracy).abs() < 1e-12);
        assert!(r.mean_accuracy > 0.8, "{}", r.mean_accuracy);

        let again = run_crossval(&spec, &d, 9, Some(2)).unwrap();
        assert_eq!(again.to_json().unwrap(), r.to_json().unwrap());
    }

    #[test]
    fn crossval_independent_of_thread_count() {
        let d = blobs(30, 2);
        let spec = ModelSpec::Bagging { learners: 2, depth: 1, budget: 15 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_crossval(&spec, &d, 4, None).unwrap().to_json().unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn self_comparison_is_null() {
        let d = blobs(20, 3);
        let spec = ModelSpec::single(1, 10);
        let a = run_crossval(&spec, &d, 5, None).unwrap();
        let b = run_crossval(&spec, &d, 5, None).unwrap();
        let t = paired_t_test(&a.validation_accuracies(), &b.validation_accuracies()).unwrap();
        assert_eq!((t.t_statistic, t.p_value), (0.0, 1.0));
    }

    #[test]
    fn folds_csv_layout() {
        let d = blobs(12, 4);
        let r = run_crossval(&ModelSpec::single(1, 5), &d, 1, None).unwrap();
        let text = folds_csv(&[&r]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "repetition,fold,model,split,accuracy");
        assert_eq!(lines.len(), 21);
        assert!(lines[1].starts_with("1,A,\"single:depth=1,budget=5\",validation,"));
    }
}
