//! Top-N thresholding and classification metrics.
//!
//! Evaluation fixes the positive-prediction budget to the top fraction of
//! predicted probabilities, then reports accuracy, rank AUC (Mann-Whitney
//! with midrank ties), precision, recall, and F1.

use serde::Serialize;

use crate::error::{Error, Result};

/// Metrics for one evaluated pool of windows.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub acc: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub samples: u64,
    pub positives_predicted: u64,
}

/// Mark exactly floor(fraction * M) samples positive, chosen by descending
/// probability; ties at the cutoff resolve by ascending sample index.
pub fn top_n_threshold(probabilities: &[f64], fraction: f64) -> Result<Vec<u8>> {
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("no probabilities to threshold".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("top-N fraction {fraction} outside (0, 1)")));
    }
    let m = probabilities.len();
    let count = (fraction * m as f64).floor() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut predictions = vec![0u8; m];
    for &i in order.iter().take(count) {
        predictions[i] = 1;
    }
    Ok(predictions)
}

/// Rank-statistic AUC over raw probabilities with midrank tie handling.
/// Degenerate pools (single-class labels) score 0.5.
pub fn rank_auc(labels: &[u8], probabilities: &[f64]) -> Result<f64> {
    if labels.len() != probabilities.len() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probabilities.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Ok(0.5);
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[a]
            .partial_cmp(&probabilities[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    // Midranks over tied probability groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probabilities[order[j + 1]] == probabilities[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Confusion counts plus the five headline metrics.
pub fn compute_metrics(labels: &[u8], probabilities: &[f64], predictions: &[u8]) -> Result<MetricsReport> {
    if labels.len() != probabilities.len() || labels.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} labels, {} probabilities, {} predictions",
            labels.len(),
            probabilities.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("nothing to score".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fn_ += 1,
            _ => return Err(Error::Validation("labels and predictions must be 0/1".into())),
        }
    }
    let m = labels.len() as f64;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        acc: (tp + tn) as f64 / m,
        auc: rank_auc(labels, probabilities)?,
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        samples: labels.len() as u64,
        positives_predicted: tp + fp,
    })
}
