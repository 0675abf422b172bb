//! Evaluation metrics: multi-label F1 (micro, macro, samples), binary
//! accuracy and rank-based ROC-AUC, and regression RMSE / MAPE.

use serde::{Deserialize, Serialize};

use crate::data::{ModalitySchema, SequenceSet, TaskKind, Vocabulary};
use crate::error::{Error, Result};
use crate::mra::{forward, ModelConfig};
use crate::tensor::Parameters;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-task metric report. Fields are present only when the task defines
/// them; anything undefined on the given data is absent with an
/// explanatory note instead of a crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_samples: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<ClassMetrics>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// Global-count F1 over all (sample, class) pairs. An empty confusion
/// (no true and no predicted positives) counts as a perfect match.
pub fn f1_micro(truth: &[Vec<u8>], pred: &[Vec<u8>]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (t_row, p_row) in truth.iter().zip(pred) {
        for (t, p) in t_row.iter().zip(p_row) {
            match (t, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fn_ += 1,
                _ => {}
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class confusion counts: `(tp, fp, fn, support)` per class.
fn class_counts(truth: &[Vec<u8>], pred: &[Vec<u8>], k: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut counts = vec![(0usize, 0usize, 0usize, 0usize); k];
    for (t_row, p_row) in truth.iter().zip(pred) {
        for j in 0..k {
            let c = &mut counts[j];
            match (t_row[j], p_row[j]) {
                (1, 1) => {
                    c.0 += 1;
                    c.3 += 1;
                }
                (0, 1) => c.1 += 1,
                (1, 0) => {
                    c.2 += 1;
                    c.3 += 1;
                }
                _ => {}
            }
        }
    }
    counts
}

/// Unweighted mean of per-class F1; a class with an empty confusion
/// contributes 0.
pub fn f1_macro(truth: &[Vec<u8>], pred: &[Vec<u8>], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let counts = class_counts(truth, pred, k);
    let sum: f64 = counts
        .iter()
        .map(|(tp, fp, fn_, _)| {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * *tp as f64 / denom as f64
            }
        })
        .sum();
    sum / k as f64
}

/// Mean over samples of the per-sample F1; a sample with no true and no
/// predicted labels counts as a perfect match.
pub fn f1_samples(truth: &[Vec<u8>], pred: &[Vec<u8>]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t_row, p_row)| {
            let inter: usize = t_row.iter().zip(p_row).filter(|(t, p)| **t == 1 && **p == 1).count();
            let t_count: usize = t_row.iter().filter(|t| **t == 1).count();
            let p_count: usize = p_row.iter().filter(|p| **p == 1).count();
            if t_count + p_count == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (t_count + p_count) as f64
            }
        })
        .sum();
    sum / truth.len() as f64
}

pub fn per_class_metrics(truth: &[Vec<u8>], pred: &[Vec<u8>], k: usize) -> Vec<ClassMetrics> {
    class_counts(truth, pred, k)
        .into_iter()
        .enumerate()
        .map(|(class, (tp, fp, fn_, support))| {
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

pub fn accuracy(truth: &[u8], pred: &[u8]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

/// ROC-AUC by the rank statistic; tied scores receive their midrank.
/// Returns `None` when the ground truth has a single class.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their block
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| **l == 1)
        .map(|(_, r)| *r)
        .sum();
    Some((pos_rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let sum: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum();
    (sum / truth.len() as f64).sqrt()
}

/// Mean absolute percentage error with a small-denominator guard for zero
/// targets.
pub fn mape(truth: &[f64], pred: &[f64]) -> f64 {
    const EPS: f64 = 1e-8;
    if truth.is_empty() {
        return 0.0;
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(y, p)| (y - p).abs() / y.abs().max(EPS))
        .sum();
    sum / truth.len() as f64
}

/// Forward every sample and score the predictions for the model task.
/// Classification probabilities are binarized at `threshold`.
pub fn evaluate(
    samples: &[SequenceSet],
    vocab: &Vocabulary,
    schema: &ModalitySchema,
    params: &Parameters,
    config: &ModelConfig,
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Ingestion("evaluation set is empty".into()));
    }
    if config.task != schema.task {
        return Err(Error::TaskMismatch(format!(
            "model is {}, dataset schema is {}",
            config.task.name(),
            schema.task.name()
        )));
    }
    let mut report = MetricsReport::default();
    match config.task {
        TaskKind::Multilabel => {
            let mut truth = Vec::with_capacity(samples.len());
            let mut pred = Vec::with_capacity(samples.len());
            for s in samples {
                let out = forward(s, vocab, schema, params, config)?;
                truth.push(s.label.as_multi_hot()?);
                pred.push(
                    out.prediction
                        .iter()
                        .map(|z| u8::from(sigmoid(*z) >= threshold))
                        .collect::<Vec<u8>>(),
                );
            }
            let k = config.output_dim;
            report.f1_micro = Some(f1_micro(&truth, &pred));
            report.f1_macro = Some(f1_macro(&truth, &pred, k));
            report.f1_samples = Some(f1_samples(&truth, &pred));
            report.per_class = Some(per_class_metrics(&truth, &pred, k));
        }
        TaskKind::Binary => {
            let mut truth = Vec::with_capacity(samples.len());
            let mut scores = Vec::with_capacity(samples.len());
            for s in samples {
                let out = forward(s, vocab, schema, params, config)?;
                truth.push(s.label.as_multi_hot()?[0]);
                scores.push(sigmoid(out.prediction[0]));
            }
            let pred: Vec<u8> = scores.iter().map(|p| u8::from(*p >= threshold)).collect();
            report.accuracy = Some(accuracy(&truth, &pred));
            report.roc_auc = roc_auc(&scores, &truth);
            if report.roc_auc.is_none() {
                report
                    .notes
                    .push("roc_auc undefined: ground truth contains a single class".into());
            }
        }
        TaskKind::Regression => {
            let mut truth = Vec::with_capacity(samples.len());
            let mut pred = Vec::with_capacity(samples.len());
            for s in samples {
                let out = forward(s, vocab, schema, params, config)?;
                truth.push(s.label.as_real()?);
                pred.push(out.prediction[0]);
            }
            report.rmse = Some(rmse(&truth, &pred));
            report.mape = Some(mape(&truth, &pred));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_give_unit_f1() {
        let truth = vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 0]];
        assert_eq!(f1_micro(&truth, &truth), 1.0);
        assert_eq!(f1_macro(&truth, &truth, 3), 1.0);
        assert_eq!(f1_samples(&truth, &truth), 1.0);
    }

    #[test]
    fn f1_micro_confusion_count_oracle() {
        // TP = 2, FP = 1, FN = 1 -> 2*2 / (4 + 1 + 1) = 2/3
        let truth = vec![vec![1, 0], vec![1, 1]];
        let pred = vec![vec![1, 1], vec![1, 0]];
        assert!((f1_micro(&truth, &pred) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_macro_zero_support_class_contributes_zero() {
        let truth = vec![vec![1, 0], vec![1, 0]];
        let pred = vec![vec![1, 0], vec![1, 0]];
        // class 0: perfect (f1 = 1); class 1: empty confusion (0)
        assert!((f1_macro(&truth, &pred, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0]), 0.5);
    }

    #[test]
    fn auc_perfect_ranking_is_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc(&scores, &labels), Some(1.0));
    }

    #[test]
    fn auc_reversed_ranking_is_zero() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc(&scores, &labels), Some(0.0));
    }

    #[test]
    fn auc_ties_get_midrank() {
        // one positive and one negative at the same score: AUC 0.5
        let scores = [0.5, 0.5];
        let labels = [0, 1];
        assert_eq!(roc_auc(&scores, &labels), Some(0.5));
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert_eq!(roc_auc(&[0.3, 0.7], &[1, 1]), None);
    }

    #[test]
    fn rmse_and_mape_hand_cases() {
        assert!((rmse(&[0.0, 2.0], &[0.0, 0.0]) - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((mape(&[1.0, 2.0], &[1.1, 1.8]) - 0.5 * (0.1 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn mape_guards_zero_targets() {
        let m = mape(&[0.0], &[0.5]);
        assert!(m.is_finite());
        assert!(m > 0.0);
    }

    #[test]
    fn f1_samples_empty_rows_count_as_match() {
        let truth = vec![vec![0, 0], vec![1, 0]];
        let pred = vec![vec![0, 0], vec![1, 0]];
        assert_eq!(f1_samples(&truth, &pred), 1.0);
    }
}
