//! Classification metrics and evaluation reports.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_inputs(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("metric", (scores.len(), 1), (labels.len(), 1)));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score is NaN".into()));
    }
    let mut pos = 0;
    for &y in labels {
        if y == 1.0 {
            pos += 1;
        } else if y != 0.0 {
            return Err(Error::Data(format!("label {y} is not 0 or 1")));
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes (positives {pos}, negatives {neg})"
        )));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=scores.len() {
        if i == scores.len() || scores[i] != scores[start] {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

fn sorted_desc(scores: &[f64], labels: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    (idx.iter().map(|&i| scores[i]).collect(), idx.iter().map(|&i| labels[i]).collect())
}

/// Mann–Whitney AUC with ties counted one half.
///
/// Counts are kept as integers so the result equals pairwise counting exactly.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let (s, y) = sorted_desc(scores, labels);
    // twice the Mann–Whitney numerator
    let mut twice: u128 = 0;
    let mut pos_above: u128 = 0;
    for g in tie_groups(&s) {
        let p = y[g.clone()].iter().filter(|&&v| v == 1.0).count() as u128;
        let n = g.len() as u128 - p;
        twice += 2 * pos_above * n + p * n;
        pos_above += p;
    }
    Ok(twice as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when nothing was predicted positive.
    pub degenerate: bool,
}

/// Positive-class precision, recall and F1, predicting positive when `score >= threshold`.
pub fn prf1(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Prf1> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let degenerate = tp + fp == 0;
    let precision = if degenerate { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// ROC vertices from `(0,0)` to `(1,1)`, one per distinct score (descending).
pub fn roc_points(scores: &[f64], labels: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let (s, y) = sorted_desc(scores, labels);
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in tie_groups(&s) {
        let p = y[g.clone()].iter().filter(|&&v| v == 1.0).count();
        tp += p;
        fp += g.len() - p;
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(pts)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub seed: u64,
    pub split: String,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub roc_points: Vec<(f64, f64)>,
}

pub fn evaluate(scores: &[f64], labels: &[f64], config: &str, seed: u64, split: &str, threshold: f64) -> Result<EvalReport> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let m = prf1(scores, labels, threshold)?;
    Ok(EvalReport {
        config: config.to_string(),
        seed,
        split: split.to_string(),
        auc: roc_auc(scores, labels)?,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        degenerate: m.degenerate,
        threshold,
        n_pos,
        n_neg,
        roc_points: roc_points(scores, labels)?,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
