//! Cross-entropy, accuracy, one-vs-others AUC and k-fold cross-validation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{train, EpochRecord, NetworkConfig, Sample, TrainConfig};

/// Lower clamp on probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
const ROW_TOLERANCE: f64 = 1e-6;

fn check_lengths(rows: usize, labels: usize) -> Result<()> {
    if rows != labels {
        return Err(Error::LengthMismatch { left: rows, right: labels });
    }
    if rows == 0 {
        return Err(Error::invalid("predictions", "no samples"));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label. Ties go to the lowest
/// class index.
pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let hits = probs.iter().zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean of `-ln p[label]` with `p` clamped below at [`PROB_FLOOR`].
pub fn mean_cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let mut total = 0.0;
    for (row, &l) in probs.iter().zip(labels) {
        if l >= row.len() {
            return Err(Error::LabelOutOfRange { label: l, classes: row.len() });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probability row", format!("sums to {sum} or has entries outside [0, 1]")));
        }
        total -= row[l].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Mann-Whitney AUC of `scores` for `class` against all other labels; ties
/// count one half.
pub fn auc_one_vs_others(scores: &[f64], labels: &[usize], class: usize) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores", "NaN score"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        pos_rank_sum += avg * idx[start..end].iter().filter(|&&i| labels[i] == class).count() as f64;
        start = end;
    }
    let n_pos = labels.iter().filter(|&&l| l == class).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::UndefinedAuc { class });
    }
    let u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Loss, accuracy and per-class AUC of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
    /// `None` where the class has no positive or no negative sample.
    pub auc: Vec<Option<f64>>,
}

impl From<&EpochRecord> for Metrics {
    fn from(r: &EpochRecord) -> Self {
        Metrics {
            loss: r.test_loss.unwrap_or(f64::NAN),
            accuracy: r.test_acc.unwrap_or(f64::NAN),
            auc: r.test_auc.clone(),
        }
    }
}

pub fn summarize(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Metrics> {
    if let Some(row) = probs.iter().find(|r| r.len() != classes) {
        return Err(Error::ShapeMismatch { context: "probability row", expected: vec![classes], actual: vec![row.len()] });
    }
    let auc = (0..classes)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
            match auc_one_vs_others(&scores, labels, c) {
                Ok(a) => Ok(Some(a)),
                Err(Error::UndefinedAuc { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics { loss: mean_cross_entropy(probs, labels)?, accuracy: accuracy(probs, labels)?, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub final_metrics: Metrics,
    /// 1-based epoch with the lowest test loss.
    pub best_epoch: usize,
    pub best_metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub folds: Vec<FoldResult>,
    /// Final-epoch metrics pooled over folds.
    pub final_metrics: Metrics,
    /// Lowest-test-loss epoch metrics pooled over folds.
    pub best_metrics: Metrics,
}

/// Sample-weighted loss and accuracy; AUC is the mean over folds where it is
/// defined.
pub fn aggregate(parts: &[(usize, &Metrics)]) -> Metrics {
    let n: usize = parts.iter().map(|(n, _)| n).sum();
    let weighted = |f: fn(&Metrics) -> f64| parts.iter().map(|(k, m)| *k as f64 * f(m)).sum::<f64>() / n as f64;
    let classes = parts.iter().map(|(_, m)| m.auc.len()).max().unwrap_or(0);
    let auc = (0..classes)
        .map(|c| {
            let vals: Vec<f64> = parts.iter().filter_map(|(_, m)| m.auc.get(c).copied().flatten()).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Metrics { loss: weighted(|m| m.loss), accuracy: weighted(|m| m.accuracy), auc }
}

/// Trains one model per fold, testing each on its held-out fold.
///
/// `folds[i]` is the fold of `samples[i]`. With `parallel` the folds train
/// concurrently; results are collected in fold order either way.
pub fn cross_validate(
    net: &NetworkConfig,
    opts: &TrainConfig,
    samples: &[Sample<f32>],
    folds: &[usize],
    k: usize,
    parallel: bool,
) -> Result<EvalResult> {
    if samples.len() != folds.len() {
        return Err(Error::LengthMismatch { left: samples.len(), right: folds.len() });
    }
    if k < 2 {
        return Err(Error::invalid("fold count", format!("k = {k}, need at least 2")));
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= k) {
        return Err(Error::invalid("fold assignment", format!("fold {f} not below k = {k}")));
    }
    if opts.epochs == 0 {
        return Err(Error::invalid("train config", "cross-validation needs at least one epoch"));
    }
    let run = |fold: usize| -> Result<FoldResult> {
        let (test, tr): (Vec<_>, Vec<_>) = samples.iter().zip(folds).partition(|(_, &f)| f == fold);
        let test: Vec<Sample<f32>> = test.into_iter().map(|(s, _)| s.clone()).collect();
        let tr: Vec<Sample<f32>> = tr.into_iter().map(|(s, _)| s.clone()).collect();
        if test.is_empty() {
            return Err(Error::invalid("fold assignment", format!("fold {fold} is empty")));
        }
        let report = train(net, &tr, &test, opts)?;
        let last = report.last().expect("at least one epoch");
        let best = report.best_by_test_loss().expect("test set is non-empty");
        Ok(FoldResult {
            fold,
            n_test: test.len(),
            final_metrics: last.into(),
            best_epoch: best.epoch,
            best_metrics: best.into(),
        })
    };
    let results: Vec<FoldResult> = if parallel {
        (0..k).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..k).map(run).collect::<Result<_>>()?
    };
    let pooled = |f: fn(&FoldResult) -> &Metrics| aggregate(&results.iter().map(|r| (r.n_test, f(r))).collect::<Vec<_>>());
    Ok(EvalResult {
        final_metrics: pooled(|r| &r.final_metrics),
        best_metrics: pooled(|r| &r.best_metrics),
        folds: results,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

impl EvalResult {
    fn classes(&self) -> usize {
        self.final_metrics.auc.len()
    }

    /// One row per fold plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let k = self.classes();
        let mut out = String::from("fold,n_test,loss,acc");
        for c in 0..k {
            write!(out, ",auc{c}").unwrap();
        }
        out.push_str(",best_epoch,best_loss,best_acc\n");
        let row = |out: &mut String, name: &str, n: usize, m: &Metrics, epoch: &str, best: &Metrics| {
            write!(out, "{name},{n},{:.6},{:.6}", m.loss, m.accuracy).unwrap();
            for c in 0..k {
                write!(out, ",{}", cell(m.auc.get(c).copied().flatten())).unwrap();
            }
            writeln!(out, ",{epoch},{:.6},{:.6}", best.loss, best.accuracy).unwrap();
        };
        for f in &self.folds {
            row(&mut out, &f.fold.to_string(), f.n_test, &f.final_metrics, &f.best_epoch.to_string(), &f.best_metrics);
        }
        let n = self.folds.iter().map(|f| f.n_test).sum();
        row(&mut out, "mean", n, &self.final_metrics, "", &self.best_metrics);
        out
    }

    /// Fixed-width table with Loss, Acc and one AUC column per class.
    pub fn to_table(&self) -> String {
        let k = self.classes();
        let mut out = format!("{:<12}{:>10}{:>10}", "", "Loss", "Acc");
        for c in 0..k {
            write!(out, "{:>10}", format!("AUC{}", c + 1)).unwrap();
        }
        out.push('\n');
        let mut line = |name: String, m: &Metrics| {
            write!(out, "{name:<12}{:>10.4}{:>10.4}", m.loss, m.accuracy).unwrap();
            for c in 0..k {
                write!(out, "{:>10}", m.auc.get(c).copied().flatten().map(|v| format!("{v:.4}")).unwrap_or("NA".into())).unwrap();
            }
            out.push('\n');
        };
        for f in &self.folds {
            line(format!("fold {}", f.fold), &f.final_metrics);
        }
        line("final".into(), &self.final_metrics);
        line("best-epoch".into(), &self.best_metrics);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_auc(scores: &[f64], labels: &[usize], c: usize) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == c && labels[j] != c {
                    pairs += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn accuracy_examples() {
        let onehot = |k: usize, c: usize| (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        assert_eq!(accuracy(&[onehot(3, 0), onehot(3, 2)], &[0, 2]).unwrap(), 1.0);
        let uniform = vec![vec![0.25; 4]; 8];
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        assert_eq!(accuracy(&uniform, &labels).unwrap(), 0.25);
        let mixed = [onehot(2, 0), onehot(2, 1), onehot(2, 1), onehot(2, 0)];
        assert_eq!(accuracy(&mixed, &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&mixed, &[0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = vec![vec![0.0, 1.0, 0.0, 0.0]];
        assert_eq!(mean_cross_entropy(&onehot, &[1]).unwrap(), 0.0);
        let uniform = vec![vec![0.25; 4]; 4];
        assert!((mean_cross_entropy(&uniform, &[0, 1, 2, 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let half = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.25; 4]];
        assert!((mean_cross_entropy(&half, &[0, 3]).unwrap() - 4f64.ln() / 2.0).abs() < 1e-12);
        // confident error stays finite
        let wrong = mean_cross_entropy(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert!((wrong - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(mean_cross_entropy(&[vec![0.5, 0.6]], &[0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_one_vs_others(&[0.9, 0.8, 0.3], &[1, 0, 1], 1).unwrap(), 0.5);
        assert_eq!(auc_one_vs_others(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 1).unwrap(), 1.0);
        assert_eq!(auc_one_vs_others(&[0.4; 6], &[0, 1, 2, 0, 1, 2], 2).unwrap(), 0.5);
        assert!(matches!(auc_one_vs_others(&[0.1, 0.2], &[1, 1], 1), Err(Error::UndefinedAuc { class: 1 })));
    }

    #[test]
    fn aggregate_weights_by_samples() {
        let a = Metrics { loss: 1.0, accuracy: 1.0, auc: vec![Some(1.0), None] };
        let b = Metrics { loss: 0.0, accuracy: 0.0, auc: vec![Some(0.5), Some(0.7)] };
        let m = aggregate(&[(3, &a), (1, &b)]);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.loss, 0.75);
        assert_eq!(m.auc, vec![Some(0.75), Some(0.7)]);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..40).prop_flat_map(|n| {
            (prop::collection::vec(0u8..6, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 5.0).collect()), prop::collection::vec(0usize..3, n))
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration((scores, labels) in scored()) {
            prop_assume!(labels.contains(&0) && labels.iter().any(|&l| l != 0));
            let a = auc_one_vs_others(&scores, &labels, 0).unwrap();
            prop_assert!((a - naive_auc(&scores, &labels, 0)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((scores, labels) in scored()) {
            prop_assume!(labels.contains(&1) && labels.iter().any(|&l| l != 1));
            let a = auc_one_vs_others(&scores, &labels, 1).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(a, auc_one_vs_others(&t, &labels, 1).unwrap());
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((a + auc_one_vs_others(&neg, &labels, 1).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn raising_true_class_probability_lowers_loss(p in 0.01f64..0.9, bump in 0.01f64..0.09) {
            let rest = (1.0 - p) / 2.0;
            let q = p + bump;
            let rest2 = (1.0 - q) / 2.0;
            let before = mean_cross_entropy(&[vec![p, rest, rest]], &[0]).unwrap();
            let after = mean_cross_entropy(&[vec![q, rest2, rest2]], &[0]).unwrap();
            prop_assert!(after < before);
        }
    }
}
