use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::select_model;
use crate::metrics::classification::{accuracy, auroc, confusion_matrix, f1_scores, Average, Scheme};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub round: usize,
    pub per_client_accuracy: Vec<f64>,
    /// Cluster model each client was evaluated with.
    pub selected: Vec<usize>,
    pub mean_accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub auroc_ovr_macro: f64,
    pub auroc_ovr_weighted: f64,
    pub auroc_ovo_macro: f64,
    pub auroc_ovo_weighted: f64,
    /// Classes absent from the pooled test labels.
    pub skipped_classes: Vec<usize>,
}

/// Scores for one pooled set of predictions: accuracy, F1 and AUROC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledScores {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub auroc_ovr_macro: f64,
    pub auroc_ovr_weighted: f64,
    pub auroc_ovo_macro: f64,
    pub auroc_ovo_weighted: f64,
}

pub fn pooled_scores(probs: &Tensor, labels: &[usize]) -> Result<(PooledScores, Vec<usize>)> {
    let preds = probs.argmax_rows();
    let confusion = confusion_matrix(&preds, labels, probs.cols())?;
    let (f1_macro, f1_weighted) = f1_scores(&confusion)?;
    let ovr_m = auroc(probs, labels, Scheme::Ovr, Average::Macro)?;
    let scores = PooledScores {
        accuracy: accuracy(&preds, labels)?,
        f1_macro,
        f1_weighted,
        auroc_ovr_macro: ovr_m.value,
        auroc_ovr_weighted: auroc(probs, labels, Scheme::Ovr, Average::Weighted)?.value,
        auroc_ovo_macro: auroc(probs, labels, Scheme::Ovo, Average::Macro)?.value,
        auroc_ovo_weighted: auroc(probs, labels, Scheme::Ovo, Average::Weighted)?.value,
    };
    Ok((scores, ovr_m.skipped))
}

/// Each client picks its model by training loss and is scored on its test
/// set. Accuracy is the mean of per-client accuracies; F1 and AUROC use
/// the predictions pooled over all clients.
pub fn evaluate_pool(models: &[ModelParams], clients: &[ClientDataset], round: usize) -> Result<EvaluationReport> {
    if clients.is_empty() {
        return Err(Error::invalid("no clients to evaluate"));
    }
    let per_client: Vec<(usize, Tensor)> = clients
        .par_iter()
        .map(|c| {
            if c.test.is_empty() {
                return Err(Error::invalid(format!("client {} has an empty test set", c.client_id)));
            }
            let n = select_model(c, models)?;
            Ok((n, models[n].predict_proba(&c.test.features)?))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut per_client_accuracy = Vec::with_capacity(clients.len());
    for (c, (_, probs)) in clients.iter().zip(&per_client) {
        per_client_accuracy.push(accuracy(&probs.argmax_rows(), &c.test.labels)?);
        rows.extend_from_slice(probs.data());
        labels.extend_from_slice(&c.test.labels);
    }
    let pooled = Tensor::matrix(labels.len(), per_client[0].1.cols(), rows)?;
    let (s, skipped_classes) = pooled_scores(&pooled, &labels)?;
    Ok(EvaluationReport {
        round,
        mean_accuracy: per_client_accuracy.iter().sum::<f64>() / clients.len() as f64,
        per_client_accuracy,
        selected: per_client.iter().map(|(n, _)| *n).collect(),
        f1_macro: s.f1_macro,
        f1_weighted: s.f1_weighted,
        auroc_ovr_macro: s.auroc_ovr_macro,
        auroc_ovr_weighted: s.auroc_ovr_weighted,
        auroc_ovo_macro: s.auroc_ovo_macro,
        auroc_ovo_weighted: s.auroc_ovo_weighted,
        skipped_classes,
    })
}
