//! Minibatch cross-entropy training shared by supervised pre-training,
//! linear evaluation and federated local updates.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::layers::{Mode, Sequential};
use crate::nn::loss::{cross_entropy, cross_entropy_with_grad, one_hot};
use crate::nn::Adam;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    /// The encoder is updated only during the first `encoder_epochs`
    /// epochs; the head trains for all of them.
    pub encoder_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitReport {
    /// Head optimizer steps taken.
    pub steps: usize,
    /// Encoder optimizer steps taken.
    pub encoder_steps: usize,
    /// Mean minibatch loss over every step; 0 when no step ran.
    pub mean_loss: f64,
}

/// Trains `head ∘ encoder` on `(x, labels)` with Adam and a fresh
/// optimizer state. Batches follow a per-epoch shuffle drawn from `rng`.
pub fn fit_classifier(
    encoder: &mut Sequential,
    head: &mut Sequential,
    x: &Tensor,
    labels: &[usize],
    opts: FitOptions,
    rng: &mut Rng,
) -> Result<FitReport> {
    if opts.encoder_epochs > opts.epochs {
        return Err(Error::invalid("encoder epochs exceed total epochs"));
    }
    if opts.epochs == 0 {
        return Ok(FitReport::default());
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let classes = head
        .out_dim()
        .ok_or_else(|| Error::invalid("classifier head has no output layer"))?;
    let mut enc_opt = Adam::new(opts.learning_rate);
    let mut head_opt = Adam::new(opts.learning_rate);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut report = FitReport::default();
    let mut loss_sum = 0.0;

    for epoch in 0..opts.epochs {
        let train_encoder = epoch < opts.encoder_epochs && !encoder.layers.is_empty();
        order.shuffle(rng);
        for chunk in order.chunks(opts.batch_size) {
            let xb = x.gather_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let target = one_hot(&yb, classes)?;

            let (h, enc_tape) = if train_encoder {
                let (h, t) = encoder.forward(&xb, Mode::Train)?;
                (h, Some(t))
            } else {
                (encoder.infer(&xb)?, None)
            };
            let (probs, head_tape) = head.forward(&h, Mode::Train)?;
            let (loss, dprobs) = cross_entropy_with_grad(&probs, &target)?;
            let (head_grads, dh) = head.backward(&head_tape, &dprobs)?;
            if let Some(tape) = enc_tape {
                let (enc_grads, _) = encoder.backward(&tape, &dh)?;
                enc_opt.step(encoder.parameters_mut(), &enc_grads)?;
                report.encoder_steps += 1;
            }
            head_opt.step(head.parameters_mut(), &head_grads)?;
            report.steps += 1;
            loss_sum += loss;
        }
    }
    report.mean_loss = loss_sum / report.steps as f64;
    Ok(report)
}

/// Full-batch eval-mode mean cross-entropy of `head ∘ encoder`.
pub fn evaluate_loss(encoder: &Sequential, head: &Sequential, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let probs = head.infer(&encoder.infer(x)?)?;
    let classes = probs.cols();
    cross_entropy(&probs, &one_hot(labels, classes)?)
}

pub fn accuracy_of(probs: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}
