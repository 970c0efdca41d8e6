use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::UnlabeledDataset;
use crate::error::{Error, Result};
use crate::nn::layers::{Mode, Sequential};
use crate::nn::model::{build_model, ModelParams, PretrainMethod, ProjectionConfig};
use crate::nn::Adam;
use crate::pretrain::augment::{augment, AugmentConfig};
use crate::pretrain::losses::{interleaved_pairs, siamese_loss_with_grad, simclr_loss_with_grad, SiameseObjective};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// InfoNCE temperature; SimCLR only.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Target-branch moving-average rate; BYOL only.
    #[serde(default)]
    pub target_update_rate: Option<f64>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default = "default_projector_dim")]
    pub projector_dim: usize,
    #[serde(default)]
    pub predictor_hidden: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    0.001
}

fn default_projector_dim() -> usize {
    32
}

impl PretrainConfig {
    /// Method defaults: τ = 0.1 for SimCLR, β = 0.9 for BYOL.
    pub fn new(method: PretrainMethod, epochs: usize, batch_size: usize) -> Self {
        PretrainConfig {
            method,
            epochs,
            batch_size,
            learning_rate: default_lr(),
            temperature: (method == PretrainMethod::SimClr).then_some(0.1),
            target_update_rate: (method == PretrainMethod::Byol).then_some(0.9),
            augment: AugmentConfig::default(),
            projector_dim: default_projector_dim(),
            predictor_hidden: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let simclr = self.method == PretrainMethod::SimClr;
        let byol = self.method == PretrainMethod::Byol;
        match (simclr, self.temperature) {
            (true, None) => return Err(Error::invalid("simclr requires a temperature")),
            (true, Some(t)) if t <= 0.0 => return Err(Error::invalid("temperature must be positive")),
            (false, Some(_)) => return Err(Error::invalid("temperature is only used by simclr")),
            _ => {}
        }
        match (byol, self.target_update_rate) {
            (true, None) => return Err(Error::invalid("byol requires a target update rate")),
            (true, Some(b)) if !(0.0..1.0).contains(&b) => {
                return Err(Error::invalid("target update rate must lie in [0, 1)"))
            }
            (false, Some(_)) => return Err(Error::invalid("target update rate is only used by byol")),
            _ => {}
        }
        if self.batch_size == 0 || self.projector_dim == 0 || self.learning_rate <= 0.0 {
            return Err(Error::invalid("batch size, projector width and learning rate must be positive"));
        }
        self.augment.validate()
    }

    pub fn projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            method: self.method,
            projector_dim: self.projector_dim,
            predictor_hidden: self.predictor_hidden,
        }
    }
}

/// `target ← β·target + (1-β)·online` over every stored tensor.
pub fn momentum_update(online: &Sequential, target: &mut Sequential, beta: f64) -> Result<()> {
    let src = online.named_state();
    let mut dst = target.state_mut();
    if src.len() != dst.len() {
        return Err(Error::dim("momentum target tensor count", src.len(), dst.len()));
    }
    for ((name, o), t) in src.iter().zip(dst.iter_mut()) {
        if !o.same_shape(t) {
            return Err(Error::dim(
                format!("momentum target {name}"),
                format!("{:?}", o.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = beta * *tv + (1.0 - beta) * ov;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    /// Trained encoder joined with the input's classifier head; projector,
    /// predictor and momentum copies are dropped.
    pub model: ModelParams,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Attaches the projection parts required by `cfg` unless already present.
fn with_projection(model: &ModelParams, cfg: &PretrainConfig) -> Result<ModelParams> {
    let proj = cfg.projection();
    if model.arch.projection.as_ref() == Some(&proj) && model.projector.is_some() {
        return Ok(model.clone());
    }
    let mut arch = model.arch.clone();
    arch.projection = Some(proj);
    let fresh = build_model(&arch, cfg.seed)?;
    let mut m = model.clone();
    m.arch = arch;
    m.projector = fresh.projector;
    m.predictor = fresh.predictor;
    if cfg.method.has_momentum() {
        m.momentum_encoder = Some(m.encoder.clone());
        m.momentum_projector = m.projector.clone();
    } else {
        m.momentum_encoder = None;
        m.momentum_projector = None;
    }
    Ok(m)
}

/// Self-supervised pre-training of `model.encoder` on unlabeled data.
pub fn pretrain_encoder(model: &ModelParams, data: &UnlabeledDataset, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if model.arch.input_dim != data.feature_dim() {
        return Err(Error::dim("encoder input vs dataset", model.arch.input_dim, data.feature_dim()));
    }
    if cfg.epochs == 0 {
        return Ok(PretrainOutcome {
            model: model.clone().without_pretraining_heads(),
            epoch_losses: vec![],
        });
    }
    let mut m = with_projection(model, cfg)?;
    let mut enc_opt = Adam::new(cfg.learning_rate);
    let mut proj_opt = Adam::new(cfg.learning_rate);
    let mut pred_opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = rng_for(cfg.seed, &[stream::AUGMENT, epoch as u64, bi as u64]);
            let b = chunk.len();
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2 * b);
            let first: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| augment(data.samples.row(i), &cfg.augment, &mut rng))
                .collect();
            let second: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| augment(data.samples.row(i), &cfg.augment, &mut rng))
                .collect();
            rows.extend(first);
            rows.extend(second);
            let views = Tensor::from_rows(&rows)?;
            total += contrastive_step(&mut m, &views, cfg, &mut enc_opt, &mut proj_opt, &mut pred_opt)?;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(PretrainOutcome {
        model: m.without_pretraining_heads(),
        epoch_losses,
    })
}

/// One optimizer step on a `[2B, dim]` batch of paired views. Returns the
/// batch loss.
fn contrastive_step(
    m: &mut ModelParams,
    views: &Tensor,
    cfg: &PretrainConfig,
    enc_opt: &mut Adam,
    proj_opt: &mut Adam,
    pred_opt: &mut Adam,
) -> Result<f64> {
    let pairs = interleaved_pairs(views.rows() / 2);
    let missing = || Error::State("projection heads were not attached".into());
    let (h, enc_tape) = m.encoder.forward(views, Mode::Train)?;
    let projector = m.projector.as_mut().ok_or_else(missing)?;
    let (z, proj_tape) = projector.forward(&h, Mode::Train)?;

    let (loss, dz) = match cfg.method {
        PretrainMethod::SimClr => {
            let tau = cfg.temperature.ok_or_else(missing)?;
            simclr_loss_with_grad(&z, &pairs, tau)?
        }
        PretrainMethod::SimSiam | PretrainMethod::Byol => {
            let predictor = m.predictor.as_mut().ok_or_else(missing)?;
            let (p, pred_tape) = predictor.forward(&z, Mode::Train)?;
            let (objective, targets) = if cfg.method == PretrainMethod::Byol {
                let te = m.momentum_encoder.as_mut().ok_or_else(missing)?;
                let (th, _) = te.forward(views, Mode::Train)?;
                let tp = m.momentum_projector.as_mut().ok_or_else(missing)?;
                let (tz, _) = tp.forward(&th, Mode::Train)?;
                (SiameseObjective::Byol, tz)
            } else {
                // stop-gradient: the online projections are used as constants
                (SiameseObjective::SimSiam, z.clone())
            };
            let out = siamese_loss_with_grad(objective, &p, &targets, &pairs)?;
            let predictor = m.predictor.as_ref().ok_or_else(missing)?;
            let (pred_grads, dz) = predictor.backward(&pred_tape, &out.grad_prediction)?;
            pred_opt.step(m.predictor.as_mut().ok_or_else(missing)?.parameters_mut(), &pred_grads)?;
            (out.loss, dz)
        }
    };

    let projector = m.projector.as_ref().ok_or_else(missing)?;
    let (proj_grads, dh) = projector.backward(&proj_tape, &dz)?;
    let (enc_grads, _) = m.encoder.backward(&enc_tape, &dh)?;
    proj_opt.step(m.projector.as_mut().ok_or_else(missing)?.parameters_mut(), &proj_grads)?;
    enc_opt.step(m.encoder.parameters_mut(), &enc_grads)?;

    if cfg.method == PretrainMethod::Byol {
        let beta = cfg.target_update_rate.ok_or_else(missing)?;
        momentum_update(&m.encoder, m.momentum_encoder.as_mut().ok_or_else(missing)?, beta)?;
        let online = m.projector.as_ref().ok_or_else(missing)?;
        momentum_update(online, m.momentum_projector.as_mut().ok_or_else(missing)?, beta)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ArchConfig;

    fn blobs(n: usize, dim: usize, seed: u64) -> UnlabeledDataset {
        use crate::rng::normal;
        let mut rng = rng_for(seed, &[99]);
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| 3.0 * normal(&mut rng)).collect::<Vec<f64>>())
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = &centers[i % 3];
                c.iter()
                    .map(|m| m + 0.5 * normal(&mut rng))
                    .collect()
            })
            .collect();
        UnlabeledDataset::new(Tensor::from_rows(&rows).unwrap()).unwrap()
    }

    fn small_arch(dim: usize) -> ArchConfig {
        let mut a = ArchConfig::new(dim, 3);
        a.encoder_widths = vec![16];
        a.representation_dim = 8;
        a
    }

    #[test]
    fn config_invariants() {
        let mut c = PretrainConfig::new(PretrainMethod::SimClr, 1, 4);
        assert!(c.validate().is_ok());
        c.temperature = None;
        assert!(c.validate().is_err());
        let mut c = PretrainConfig::new(PretrainMethod::Byol, 1, 4);
        c.temperature = Some(0.1);
        assert!(c.validate().is_err());
        let mut c = PretrainConfig::new(PretrainMethod::Byol, 1, 4);
        c.target_update_rate = Some(1.0);
        assert!(c.validate().is_err());
        let mut c = PretrainConfig::new(PretrainMethod::SimSiam, 1, 4);
        c.target_update_rate = Some(0.5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_input_encoder() {
        let data = blobs(12, 5, 0);
        let m = build_model(&small_arch(5), 3).unwrap();
        let out = pretrain_encoder(&m, &data, &PretrainConfig::new(PretrainMethod::SimClr, 0, 4)).unwrap();
        assert_eq!(out.model, m);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let data = blobs(12, 5, 0);
        let m = build_model(&small_arch(6), 3).unwrap();
        let r = pretrain_encoder(&m, &data, &PretrainConfig::new(PretrainMethod::SimClr, 1, 4));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn every_method_trains_deterministically() {
        let data = blobs(24, 5, 1);
        let m = build_model(&small_arch(5), 3).unwrap();
        for method in [PretrainMethod::SimClr, PretrainMethod::Byol, PretrainMethod::SimSiam] {
            let cfg = PretrainConfig::new(method, 2, 8);
            let a = pretrain_encoder(&m, &data, &cfg).unwrap();
            let b = pretrain_encoder(&m, &data, &cfg).unwrap();
            assert_eq!(a, b, "{method:?}");
            assert_eq!(a.epoch_losses.len(), 2);
            assert_ne!(a.model.encoder, m.encoder);
            assert!(a.model.projector.is_none() && a.model.momentum_encoder.is_none());
            assert_eq!(a.model.classifier, m.classifier);
        }
    }

    #[test]
    fn simclr_loss_decreases_on_blobs() {
        let data = blobs(120, 6, 2);
        let m = build_model(&small_arch(6), 5).unwrap();
        let mut cfg = PretrainConfig::new(PretrainMethod::SimClr, 50, 32);
        cfg.learning_rate = 0.003;
        let out = pretrain_encoder(&m, &data, &cfg).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn momentum_edge_rates() {
        let a = build_model(&small_arch(4), 1).unwrap().encoder;
        let b = build_model(&small_arch(4), 2).unwrap().encoder;
        let mut t = b.clone();
        momentum_update(&a, &mut t, 0.0).unwrap();
        assert_eq!(t, a);
        let mut t = b.clone();
        momentum_update(&a, &mut t, 1.0).unwrap();
        assert_eq!(t, b);
    }
}
