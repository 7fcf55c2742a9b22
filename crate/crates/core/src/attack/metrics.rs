use serde::{Deserialize, Serialize};

use super::{AttackError, Result};

/// Mann–Whitney AUC: probability a random member outscores a random non-member,
/// ties counted ½. Computed from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AttackError::SingleClassEval);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub auc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub advantage: f64,
}

pub const METRIC_NAMES: [&str; 6] = ["auc", "accuracy", "precision", "recall", "f1", "advantage"];

impl MetricsRow {
    pub fn values(&self) -> [f64; 6] {
        [self.auc, self.accuracy, self.precision, self.recall, self.f1, self.advantage]
    }
}

/// Metrics from ranking scores (higher = more likely member) and hard predictions.
/// Precision is 0 when nothing is predicted positive; F1 is 0 when precision + recall is 0.
pub fn metrics_from(scores: &[f64], predictions: &[bool], labels: &[bool]) -> Result<MetricsRow> {
    let auc = auc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(MetricsRow {
        auc,
        accuracy: ratio(tp + tn, labels.len()),
        precision,
        recall,
        f1,
        advantage: auc - 0.5,
    })
}

/// Metrics for member probabilities with the 0.5 cutoff (≥ 0.5 predicts member).
pub fn evaluate_probabilities(probs: &[f64], labels: &[bool]) -> Result<MetricsRow> {
    let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    metrics_from(probs, &preds, labels)
}
