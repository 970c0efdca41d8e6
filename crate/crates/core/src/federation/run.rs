//! The server loop shared by FedAvg, IFCA and CP-CFL.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::config::{Algorithm, FederationConfig};
use crate::federation::cost::comm_cost;
use crate::federation::pool::{aggregate, aggregate_encoders, local_update, select_model, ClusterModelPool, LocalUpdate};
use crate::metrics::{evaluate_pool, ClusterTrace, EvaluationReport};
use crate::nn::Sequential;
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Select,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    /// Chosen cluster per client (0-based), `None` if it sat the round out.
    pub cluster_identity: Vec<Option<usize>>,
    pub cluster_sizes: Vec<usize>,
    pub mean_train_loss: f64,
    /// Per-client cost so far with model size 1.
    pub comm_cost_units: f64,
    /// Restarts performed up to and including this round.
    pub restarts: usize,
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<RoundRecord>,
}

impl RunHistory {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(RunHistory { records })
    }

    pub fn trace(&self, truth: Vec<usize>) -> ClusterTrace {
        ClusterTrace {
            rounds: self.records.iter().map(|r| r.cluster_identity.clone()).collect(),
            truth,
        }
    }

    pub fn restarts(&self) -> usize {
        self.records.last().map_or(0, |r| r.restarts)
    }

    pub fn final_evaluation(&self) -> Option<&EvaluationReport> {
        self.records.iter().rev().find_map(|r| r.evaluation.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// IFCA collapsed onto one cluster after exhausting its restarts.
    ClusteringFailure { round: usize, restarts: usize },
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub pool: ClusterModelPool,
    pub history: RunHistory,
    pub status: RunStatus,
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone)]
pub struct FederationState {
    pub pool: ClusterModelPool,
    pub restarts: usize,
    pub comm_cost_units: f64,
}

impl FederationState {
    pub fn new(pool: ClusterModelPool) -> Self {
        FederationState {
            pool,
            restarts: 0,
            comm_cost_units: 0.0,
        }
    }
}

/// The random cluster a client trains during exploration round `t`.
pub fn exploration_choice(seed: u64, t: usize, client_id: usize, clusters: usize) -> usize {
    rng_for(seed, &[stream::EXPLORE, t as u64, client_id as u64]).random_range(0..clusters)
}

/// Positions of the clients taking part in round `t`, ascending.
pub fn sample_participants(seed: u64, t: usize, clients: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..clients).collect();
    }
    let m = ((fraction * clients as f64).round() as usize).clamp(1, clients);
    let mut idx = sample(&mut rng_for(seed, &[stream::PARTICIPATION, t as u64]), clients, m).into_vec();
    idx.sort_unstable();
    idx
}

/// True iff every round in the window has exactly one nonempty cluster.
pub fn detect_clustering_failure(window: &[Vec<usize>]) -> bool {
    !window.is_empty() && window.iter().all(|sizes| sizes.iter().filter(|&&n| n > 0).count() == 1)
}

pub fn run_round(state: &mut FederationState, t: usize, clients: &[ClientDataset], cfg: &FederationConfig) -> Result<RoundRecord> {
    if t >= cfg.rounds {
        return Err(Error::invalid(format!("round {t} beyond the budget of {}", cfg.rounds)));
    }
    let n_clusters = state.pool.len();
    let explore = t < cfg.effective_exploration_rounds();
    let participants = sample_participants(cfg.seed, t, clients.len(), cfg.participation);
    let models = &state.pool.models;

    let updates: Vec<LocalUpdate> = participants
        .par_iter()
        .map(|&pos| {
            let client = &clients[pos];
            let attempt = || -> Result<LocalUpdate> {
                let n = if explore {
                    exploration_choice(cfg.seed, t, client.client_id, n_clusters)
                } else {
                    select_model(client, models)?
                };
                let mut rng = rng_for(cfg.seed, &[stream::LOCAL, t as u64, client.client_id as u64]);
                local_update(client, &models[n], n, cfg, explore, &mut rng)
            };
            attempt().map_err(|e| Error::Client {
                client: client.client_id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut cluster_identity = vec![None; clients.len()];
    for (&pos, u) in participants.iter().zip(&updates) {
        members[u.cluster_identity].push(clients[pos].client_id);
        cluster_identity[pos] = Some(u.cluster_identity);
    }
    for n in 0..n_clusters {
        let group: Vec<&LocalUpdate> = updates.iter().filter(|u| u.cluster_identity == n).collect();
        if !group.is_empty() {
            state.pool.models[n] = aggregate(&group)?;
        }
    }
    if cfg.global_encoder && !explore {
        let shared: Sequential = aggregate_encoders(&updates)?;
        for m in &mut state.pool.models {
            m.encoder = shared.clone();
        }
    }
    state.pool.memberships.push(members.clone());
    state.comm_cost_units += comm_cost(1, n_clusters, 1.0, cfg.algorithm);

    let evaluate = t + 1 == cfg.rounds || (cfg.eval_every > 0 && t.is_multiple_of(cfg.eval_every));
    let evaluation = if evaluate {
        Some(evaluate_pool(&state.pool.models, clients, t)?)
    } else {
        None
    };
    Ok(RoundRecord {
        round: t,
        phase: if explore { Phase::Explore } else { Phase::Select },
        cluster_identity,
        cluster_sizes: members.iter().map(Vec::len).collect(),
        mean_train_loss: updates.iter().map(|u| u.train_loss).sum::<f64>() / updates.len() as f64,
        comm_cost_units: state.comm_cost_units,
        restarts: state.restarts,
        evaluation,
    })
}

/// Runs all `T` rounds from `initial_pool`. IFCA runs check for collapse
/// onto a single cluster and restart from freshly drawn models (keeping a
/// pre-trained encoder if one was configured); once restarts are used up
/// the run stops and reports a clustering failure.
pub fn run_federation(cfg: &FederationConfig, clients: &[ClientDataset], initial_pool: ClusterModelPool) -> Result<FederationOutcome> {
    cfg.validate()?;
    if initial_pool.len() != cfg.clusters {
        return Err(Error::invalid(format!(
            "pool holds {} models but {} clusters are configured",
            initial_pool.len(),
            cfg.clusters
        )));
    }
    if clients.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    let arch = initial_pool.models[0].arch.clone();
    let kept_encoder = cfg.pretrained_encoder.as_ref().map(|_| initial_pool.models[0].encoder.clone());
    let check_failure = cfg.algorithm == Algorithm::Ifca && cfg.clusters > 1;
    let window = cfg.ifca_restart.failure_window;

    let mut state = FederationState::new(initial_pool);
    let mut history = RunHistory::default();
    let mut since_restart = 0;
    let mut status = RunStatus::Completed;
    for t in 0..cfg.rounds {
        let mut record = run_round(&mut state, t, clients, cfg)?;
        if record.phase == Phase::Select {
            since_restart += 1;
        }
        let recent: Vec<Vec<usize>> = history
            .records
            .iter()
            .map(|r| r.cluster_sizes.clone())
            .chain(std::iter::once(record.cluster_sizes.clone()))
            .rev()
            .take(window)
            .collect();
        if check_failure && since_restart >= window && detect_clustering_failure(&recent) {
            if state.restarts >= cfg.ifca_restart.max_restarts {
                log::warn!("clustering failure at round {t} after {} restarts", state.restarts);
                if record.evaluation.is_none() {
                    record.evaluation = Some(evaluate_pool(&state.pool.models, clients, t)?);
                }
                status = RunStatus::ClusteringFailure {
                    round: t,
                    restarts: state.restarts,
                };
                history.records.push(record);
                break;
            }
            state.restarts += 1;
            log::info!("clustering failure at round {t}; restart {}", state.restarts);
            let seed = derive_seed(cfg.seed, &[stream::RESTART, state.restarts as u64]);
            let mut fresh = ClusterModelPool::initialize(&arch, cfg.clusters, seed, kept_encoder.as_ref())?;
            fresh.memberships = std::mem::take(&mut state.pool.memberships);
            state.pool = fresh;
            since_restart = 0;
            record.restarts = state.restarts;
        }
        history.records.push(record);
    }
    Ok(FederationOutcome {
        pool: state.pool,
        history,
        status,
    })
}
