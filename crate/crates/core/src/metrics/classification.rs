//! Accuracy, F1 and AUROC over class-probability predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predicted.len() != labels.len() {
        return Err(Error::dim("predictions vs labels", labels.len(), predicted.len()));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::invalid(format!("class index out of range for {classes} classes")));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::dim("predictions vs labels", labels.len(), predicted.len()));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class F1 with 0 when precision + recall is 0; returns
/// `(macro, support-weighted)`.
pub fn f1_scores(confusion: &[Vec<u64>]) -> Result<(f64, f64)> {
    let k = confusion.len();
    if confusion.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("confusion matrix must be square"));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is all zero"));
    }
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        macro_sum += f1;
        weighted_sum += f1 * support as f64;
    }
    Ok((macro_sum / k as f64, weighted_sum / total as f64))
}

/// Binary AUROC via the Mann-Whitney statistic with average ranks for
/// ties. `None` when either class is absent.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ovr,
    Ovo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Macro,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocResult {
    pub value: f64,
    /// Classes left out because they had no positive samples.
    pub skipped: Vec<usize>,
}

fn check_scores(scores: &Tensor, labels: &[usize]) -> Result<usize> {
    if scores.shape().len() != 2 || scores.rows() != labels.len() {
        return Err(Error::dim("score rows vs labels", labels.len(), scores.rows()));
    }
    let k = scores.cols();
    for r in 0..scores.rows() {
        let s: f64 = scores.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("score row {r} sums to {s}")));
        }
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
    }
    Ok(k)
}

pub fn auroc(scores: &Tensor, labels: &[usize], scheme: Scheme, average: Average) -> Result<AurocResult> {
    let k = check_scores(scores, labels)?;
    let mut support = vec![0usize; k];
    labels.iter().for_each(|&y| support[y] += 1);
    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::invalid("AUROC needs at least two classes present"));
    }
    let skipped: Vec<usize> = (0..k).filter(|&c| support[c] == 0).collect();
    if !skipped.is_empty() {
        log::warn!("AUROC skips classes without positives: {skipped:?}");
    }

    // (score, weight) per binary problem
    let mut parts: Vec<(f64, f64)> = Vec::new();
    match scheme {
        Scheme::Ovr => {
            for &c in &present {
                let s: Vec<f64> = (0..labels.len()).map(|i| scores.get(i, c)).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                let a = binary_auroc(&s, &pos).expect("both classes present");
                parts.push((a, support[c] as f64));
            }
        }
        Scheme::Ovo => {
            for &a in &present {
                for &b in &present {
                    if a == b {
                        continue;
                    }
                    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
                    let s: Vec<f64> = idx.iter().map(|&i| scores.get(i, a)).collect();
                    let pos: Vec<bool> = idx.iter().map(|&i| labels[i] == a).collect();
                    let v = binary_auroc(&s, &pos).expect("both classes present");
                    parts.push((v, (support[a] + support[b]) as f64));
                }
            }
        }
    }
    let value = match average {
        Average::Macro => parts.iter().map(|p| p.0).sum::<f64>() / parts.len() as f64,
        Average::Weighted => {
            let w: f64 = parts.iter().map(|p| p.1).sum();
            parts.iter().map(|p| p.0 * p.1).sum::<f64>() / w
        }
    };
    Ok(AurocResult { value, skipped })
}
