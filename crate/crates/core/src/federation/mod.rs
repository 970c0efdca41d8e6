//! Server/client simulation of FedAvg, IFCA and CP-CFL.

pub mod config;
pub mod cost;
pub mod pool;
pub mod run;

pub use config::{Algorithm, FederationConfig, RestartConfig};
pub use cost::{comm_cost, CommCostSummary};
pub use pool::{aggregate, aggregate_encoders, local_update, pool_losses, select_model, ClusterModelPool, LocalUpdate};
pub use run::{
    detect_clustering_failure, exploration_choice, run_federation, run_round, sample_participants, FederationOutcome,
    FederationState, Phase, RoundRecord, RunHistory, RunStatus,
};
