use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled examples stored as a `[n, dim]` feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim("labeled features", "[n, dim]", format!("{:?}", features.shape())));
        }
        if features.rows() != labels.len() {
            return Err(Error::dim("labeled dataset rows", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::invalid(format!("label {bad} out of range for {class_count} classes")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn empty(dim: usize, class_count: usize) -> Self {
        LabeledDataset {
            features: Tensor::zeros(&[0, dim]),
            labels: Vec::new(),
            class_count,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Sorted list of classes with at least one sample.
    pub fn label_support(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            samples: self.features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledDataset {
    pub samples: Tensor,
}

impl UnlabeledDataset {
    pub fn new(samples: Tensor) -> Result<Self> {
        if samples.shape().len() != 2 || samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::invalid(format!(
                "unlabeled dataset must be a nonempty [n, dim] matrix, got {:?}",
                samples.shape()
            )));
        }
        Ok(UnlabeledDataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.cols()
    }
}
