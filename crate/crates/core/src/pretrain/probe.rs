use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::layers::Sequential;
use crate::nn::model::{build_classifier, HeadVariant, ModelParams};
use crate::rng::{rng_for, stream};
use crate::train::{accuracy_of, fit_classifier, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

fn check_labels(model: &ModelParams, data: &LabeledDataset) -> Result<()> {
    if data.class_count > model.arch.classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, head predicts {}",
            data.class_count, model.arch.classes
        )));
    }
    if data.dim() != model.arch.input_dim {
        return Err(Error::dim("dataset vs encoder input", model.arch.input_dim, data.dim()));
    }
    Ok(())
}

/// Trains encoder and classifier with cross-entropy. Only the encoder is
/// meant to be transferred; the trained head is kept for inspection.
pub fn supervised_pretrain(model: &ModelParams, data: &LabeledDataset, cfg: &ProbeConfig) -> Result<ModelParams> {
    check_labels(model, data)?;
    let mut m = model.clone();
    let opts = FitOptions {
        epochs: cfg.epochs,
        encoder_epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
    };
    let mut rng = rng_for(cfg.seed, &[stream::SHUFFLE]);
    fit_classifier(&mut m.encoder, &mut m.classifier, &data.features, &data.labels, opts, &mut rng)?;
    Ok(m)
}

/// Proxy-test accuracy of a fresh single-layer head trained on top of the
/// frozen encoder.
pub fn linear_evaluation(
    model: &ModelParams,
    proxy_train: &LabeledDataset,
    proxy_test: &LabeledDataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if proxy_train.is_empty() || proxy_test.is_empty() {
        return Err(Error::invalid("linear evaluation needs nonempty proxy sets"));
    }
    check_labels(model, proxy_train)?;
    check_labels(model, proxy_test)?;
    let train_h = model.encode(&proxy_train.features)?;
    let test_h = model.encode(&proxy_test.features)?;
    let mut arch = model.arch.clone();
    arch.head = HeadVariant::C;
    arch.classes = proxy_train.class_count.max(proxy_test.class_count);
    let mut head = build_classifier(&arch, &mut rng_for(cfg.seed, &[stream::PROBE]));
    let opts = FitOptions {
        epochs: cfg.epochs,
        encoder_epochs: 0,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
    };
    let mut identity = Sequential::default();
    let mut rng = rng_for(cfg.seed, &[stream::PROBE, stream::SHUFFLE]);
    fit_classifier(&mut identity, &mut head, &train_h, &proxy_train.labels, opts, &mut rng)?;
    Ok(accuracy_of(&head.infer(&test_h)?, &proxy_test.labels))
}
