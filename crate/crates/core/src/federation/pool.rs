//! Cluster model pool, model selection, local training and aggregation.

use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::config::FederationConfig;
use crate::nn::{build_model, ArchConfig, ModelParams, Sequential};
use crate::rng::{derive_seed, stream, Rng};
use crate::train::{evaluate_loss, fit_classifier, FitOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModelPool {
    pub models: Vec<ModelParams>,
    /// Client ids per cluster, one entry per completed round.
    pub memberships: Vec<Vec<Vec<usize>>>,
}

impl ClusterModelPool {
    pub fn new(models: Vec<ModelParams>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::invalid("model pool is empty"))?;
        if let Some(i) = models.iter().position(|m| !m.same_architecture(first)) {
            return Err(Error::invalid(format!("pool model {i} differs in architecture from model 0")));
        }
        Ok(ClusterModelPool {
            models,
            memberships: Vec::new(),
        })
    }

    /// `n` independently initialized models. With `encoder` given, every
    /// model shares that encoder and only the heads are random.
    pub fn initialize(arch: &ArchConfig, n: usize, seed: u64, encoder: Option<&Sequential>) -> Result<Self> {
        let mut arch = arch.clone();
        arch.projection = None;
        let models = (0..n)
            .map(|i| {
                let mut m = build_model(&arch, derive_seed(seed, &[stream::INIT, 0x100, i as u64]))?;
                if let Some(enc) = encoder {
                    if enc.out_dim() != m.encoder.out_dim() || enc.in_dim() != m.encoder.in_dim() {
                        return Err(Error::dim(
                            "pretrained encoder",
                            format!("{:?} -> {:?}", m.encoder.in_dim(), m.encoder.out_dim()),
                            format!("{:?} -> {:?}", enc.in_dim(), enc.out_dim()),
                        ));
                    }
                    m.encoder = enc.clone();
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        ClusterModelPool::new(models)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

fn check_client(client: &ClientDataset, model: &ModelParams) -> Result<()> {
    if client.train.is_empty() {
        return Err(Error::invalid(format!("client {} has no training data", client.client_id)));
    }
    if Some(client.train.dim()) != model.encoder.in_dim() {
        return Err(Error::dim("client features", format!("{:?}", model.encoder.in_dim()), client.train.dim()));
    }
    if Some(client.train.class_count) != model.classifier.out_dim() {
        return Err(Error::dim("client classes", format!("{:?}", model.classifier.out_dim()), client.train.class_count));
    }
    Ok(())
}

/// Full-batch eval-mode loss of every pool model on the client's train set.
pub fn pool_losses(client: &ClientDataset, models: &[ModelParams]) -> Result<Vec<f64>> {
    models
        .iter()
        .map(|m| {
            check_client(client, m)?;
            evaluate_loss(&m.encoder, &m.classifier, &client.train.features, &client.train.labels)
        })
        .collect()
}

/// Index of the pool model with the lowest loss; ties go to the lowest index.
pub fn select_model(client: &ClientDataset, models: &[ModelParams]) -> Result<usize> {
    if models.is_empty() {
        return Err(Error::invalid("model pool is empty"));
    }
    let losses = pool_losses(client, models)?;
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub cluster_identity: usize,
    pub sample_count: usize,
    pub optimizer_steps: usize,
    pub train_loss: f64,
}

/// Trains a private copy of `model` on the client's data for the
/// configured local epochs. A frozen encoder is never touched; otherwise
/// the encoder trains during the first `encoder_epochs` epochs only.
pub fn local_update(
    client: &ClientDataset,
    model: &ModelParams,
    cluster_identity: usize,
    cfg: &FederationConfig,
    freeze_encoder: bool,
    rng: &mut Rng,
) -> Result<LocalUpdate> {
    check_client(client, model)?;
    let mut params = model.clone();
    let opts = FitOptions {
        epochs: cfg.local_epochs,
        encoder_epochs: if freeze_encoder { 0 } else { cfg.encoder_epochs() },
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
    };
    let report = fit_classifier(
        &mut params.encoder,
        &mut params.classifier,
        &client.train.features,
        &client.train.labels,
        opts,
        rng,
    )?;
    Ok(LocalUpdate {
        client_id: client.client_id,
        params,
        cluster_identity,
        sample_count: client.train.len(),
        optimizer_steps: report.steps,
        train_loss: report.mean_loss,
    })
}

/// Weighted mean of `Σ w_u θ_u` with `w_u ∝ |D_u|` over the listed
/// sequences. Tensors that agree bitwise across all inputs are copied.
fn weighted_mean(parts: &[(&Sequential, f64)]) -> Sequential {
    let mut out = parts[0].0.clone();
    let inputs: Vec<Vec<&crate::tensor::Tensor>> = parts
        .iter()
        .map(|(s, _)| s.named_state().into_iter().map(|(_, t)| t).collect())
        .collect();
    for (k, slot) in out.state_mut().into_iter().enumerate() {
        if inputs.iter().all(|ts| ts[k] == inputs[0][k]) {
            continue;
        }
        for (i, v) in slot.data_mut().iter_mut().enumerate() {
            *v = parts.iter().zip(&inputs).map(|((_, w), ts)| w * ts[k].data()[i]).sum();
        }
    }
    out
}

fn weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if counts.contains(&0) {
        return Err(Error::invalid("local update with zero samples"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Sample-size weighted parameter average of one cluster's updates.
pub fn aggregate(updates: &[&LocalUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or_else(|| Error::invalid("aggregate of no updates"))?;
    if let Some(u) = updates.iter().find(|u| !u.params.same_architecture(&first.params)) {
        return Err(Error::invalid(format!("update from client {} has a different architecture", u.client_id)));
    }
    let w = weights(&updates.iter().map(|u| u.sample_count).collect::<Vec<_>>())?;
    if updates.len() == 1 {
        return Ok(first.params.clone());
    }
    let mut out = first.params.clone();
    let enc: Vec<_> = updates.iter().zip(&w).map(|(u, &w)| (&u.params.encoder, w)).collect();
    let head: Vec<_> = updates.iter().zip(&w).map(|(u, &w)| (&u.params.classifier, w)).collect();
    out.encoder = weighted_mean(&enc);
    out.classifier = weighted_mean(&head);
    Ok(out)
}

/// Sample-size weighted mean of the encoders of all updates.
pub fn aggregate_encoders(updates: &[LocalUpdate]) -> Result<Sequential> {
    if updates.is_empty() {
        return Err(Error::invalid("aggregate of no updates"));
    }
    let w = weights(&updates.iter().map(|u| u.sample_count).collect::<Vec<_>>())?;
    let parts: Vec<_> = updates.iter().zip(&w).map(|(u, &w)| (&u.params.encoder, w)).collect();
    Ok(weighted_mean(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, partition_clients, PartitionSpec, SyntheticSpec};
    use crate::rng::rng_for;

    fn arch() -> ArchConfig {
        let mut a = ArchConfig::new(6, 10);
        a.encoder_widths = vec![12];
        a.representation_dim = 8;
        a
    }

    fn client() -> ClientDataset {
        let d = generate_synthetic(&SyntheticSpec {
            dim: 6,
            per_class: 60,
            test_per_class: 40,
            unlabeled_count: 10,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spec = PartitionSpec {
            num_clients: 3,
            ..PartitionSpec::default()
        };
        partition_clients(&d.train, &d.test, &spec).unwrap().remove(0)
    }

    fn update(params: ModelParams, n: usize) -> LocalUpdate {
        LocalUpdate {
            client_id: 0,
            params,
            cluster_identity: 0,
            sample_count: n,
            optimizer_steps: 0,
            train_loss: 0.0,
        }
    }

    #[test]
    fn single_cluster_always_selected() {
        let pool = ClusterModelPool::initialize(&arch(), 1, 3, None).unwrap();
        assert_eq!(select_model(&client(), &pool.models).unwrap(), 0);
    }

    #[test]
    fn selects_own_trained_model() {
        let c = client();
        let mut pool = ClusterModelPool::initialize(&arch(), 4, 9, None).unwrap();
        let cfg = FederationConfig {
            local_epochs: 40,
            learning_rate: 0.01,
            ..FederationConfig::default()
        };
        let u = local_update(&c, &pool.models[1], 1, &cfg, false, &mut rng_for(0, &[])).unwrap();
        pool.models[1] = u.params;
        assert_eq!(select_model(&c, &pool.models).unwrap(), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pool = ClusterModelPool::initialize(&arch(), 4, 9, None).unwrap();
        let mut models = pool.models.clone();
        models[0] = models[3].clone();
        models[2] = models[3].clone();
        let losses = pool_losses(&client(), &models).unwrap();
        let best = select_model(&client(), &models).unwrap();
        if losses[3] <= losses[1] {
            assert_eq!(best, 0);
        } else {
            assert_eq!(best, 1);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let pool = ClusterModelPool::initialize(&arch(), 1, 3, None).unwrap();
        let cfg = FederationConfig {
            local_epochs: 0,
            ..FederationConfig::default()
        };
        let u = local_update(&client(), &pool.models[0], 0, &cfg, false, &mut rng_for(0, &[])).unwrap();
        assert_eq!(u.params, pool.models[0]);
        assert_eq!(u.optimizer_steps, 0);
    }

    #[test]
    fn frozen_encoder_untouched() {
        let pool = ClusterModelPool::initialize(&arch(), 1, 3, None).unwrap();
        let u = local_update(&client(), &pool.models[0], 0, &FederationConfig::default(), true, &mut rng_for(0, &[])).unwrap();
        assert_eq!(u.params.encoder, pool.models[0].encoder);
        assert_ne!(u.params.classifier, pool.models[0].classifier);
    }

    #[test]
    fn step_count_for_fifty_samples() {
        let c = client();
        assert_eq!(c.train.len(), 50);
        let pool = ClusterModelPool::initialize(&arch(), 1, 3, None).unwrap();
        let u = local_update(&c, &pool.models[0], 0, &FederationConfig::default(), false, &mut rng_for(0, &[])).unwrap();
        assert_eq!(u.optimizer_steps, 6);
        assert_eq!(u.sample_count, 50);
    }

    #[test]
    fn encoder_epoch_limit() {
        let c = client();
        let pool = ClusterModelPool::initialize(&arch(), 1, 3, None).unwrap();
        let none = FederationConfig {
            encoder_epochs: Some(0),
            ..FederationConfig::default()
        };
        let u = local_update(&c, &pool.models[0], 0, &none, false, &mut rng_for(0, &[])).unwrap();
        assert_eq!(u.params.encoder, pool.models[0].encoder);
        let one = FederationConfig {
            encoder_epochs: Some(1),
            ..FederationConfig::default()
        };
        let u = local_update(&c, &pool.models[0], 0, &one, false, &mut rng_for(0, &[])).unwrap();
        assert_ne!(u.params.encoder, pool.models[0].encoder);
    }

    #[test]
    fn aggregate_hand_case() {
        let pool = ClusterModelPool::initialize(&arch(), 2, 1, None).unwrap();
        let mut a = pool.models[0].clone();
        let mut b = pool.models[1].clone();
        a.state_mut().into_iter().for_each(|t| t.data_mut().fill(1.0));
        b.state_mut().into_iter().for_each(|t| t.data_mut().fill(5.0));
        let (ua, ub) = (update(a, 10), update(b, 30));
        let agg = aggregate(&[&ua, &ub]).unwrap();
        assert!(agg.named_state().iter().all(|(_, t)| t.data().iter().all(|&v| v == 4.0)));
    }

    #[test]
    fn single_update_verbatim() {
        let pool = ClusterModelPool::initialize(&arch(), 1, 1, None).unwrap();
        let u = update(pool.models[0].clone(), 7);
        assert_eq!(aggregate(&[&u]).unwrap(), pool.models[0]);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn pretrained_encoder_shared() {
        let enc = build_model(&arch(), 77).unwrap().encoder;
        let pool = ClusterModelPool::initialize(&arch(), 3, 1, Some(&enc)).unwrap();
        assert!(pool.models.iter().all(|m| m.encoder == enc));
        assert_ne!(pool.models[0].classifier, pool.models[1].classifier);
    }
}
