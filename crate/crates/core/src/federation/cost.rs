//! Per-client communication cost in model-size units.

use serde::{Deserialize, Serialize};

use crate::federation::config::Algorithm;

/// Total cost for one client over `rounds` rounds. FedAvg moves one model
/// each way per round (`2ST`); the clustered methods download all `N`
/// cluster models and upload one (`(N+1)ST`).
pub fn comm_cost(rounds: usize, clusters: usize, model_size: f64, algorithm: Algorithm) -> f64 {
    let per_round = match algorithm {
        Algorithm::FedAvg => 2.0,
        Algorithm::Ifca | Algorithm::CpCfl => clusters as f64 + 1.0,
    };
    per_round * model_size * rounds as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommCostSummary {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub clusters: usize,
    /// Cost with `S = 1`.
    pub units: f64,
    /// Cost with `S` = number of transmitted scalars.
    pub scalars: f64,
    pub model_size: usize,
}

impl CommCostSummary {
    pub fn new(algorithm: Algorithm, rounds: usize, clusters: usize, model_size: usize) -> Self {
        CommCostSummary {
            algorithm,
            rounds,
            clusters,
            units: comm_cost(rounds, clusters, 1.0, algorithm),
            scalars: comm_cost(rounds, clusters, model_size as f64, algorithm),
            model_size,
        }
    }
}
