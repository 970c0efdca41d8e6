use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    Ifca,
    CpCfl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::Ifca => "ifca",
            Algorithm::CpCfl => "cpcfl",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Algorithm::FedAvg),
            "ifca" => Ok(Algorithm::Ifca),
            "cpcfl" => Ok(Algorithm::CpCfl),
            other => Err(Error::invalid(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestartConfig {
    pub max_restarts: usize,
    /// Consecutive single-cluster selection rounds that count as failure.
    pub failure_window: usize,
}

impl Default for RestartConfig {
    fn default() -> Self {
        RestartConfig {
            max_restarts: 3,
            failure_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub rounds: usize,
    /// Rounds of random model choice with a frozen encoder (CP-CFL only).
    pub exploration_rounds: usize,
    pub local_epochs: usize,
    /// Leading local epochs in which the encoder is trained; `None` means
    /// all of them.
    pub encoder_epochs: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub participation: f64,
    /// Average encoders across all clusters every round.
    pub global_encoder: bool,
    pub pretrained_encoder: Option<PathBuf>,
    pub ifca_restart: RestartConfig,
    /// Evaluate the pool every this many rounds (0: final round only).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            algorithm: Algorithm::CpCfl,
            clusters: 3,
            rounds: 100,
            exploration_rounds: 10,
            local_epochs: 3,
            encoder_epochs: None,
            learning_rate: 0.001,
            batch_size: 32,
            participation: 1.0,
            global_encoder: false,
            pretrained_encoder: None,
            ifca_restart: RestartConfig::default(),
            eval_every: 1,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn fedavg() -> Self {
        FederationConfig {
            algorithm: Algorithm::FedAvg,
            clusters: 1,
            exploration_rounds: 0,
            ..FederationConfig::default()
        }
    }

    pub fn ifca() -> Self {
        FederationConfig {
            algorithm: Algorithm::Ifca,
            exploration_rounds: 0,
            ..FederationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::invalid("cluster count must be at least 1"));
        }
        if self.algorithm == Algorithm::FedAvg && self.clusters != 1 {
            return Err(Error::invalid("fedavg runs with exactly one cluster"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("round count must be positive"));
        }
        if self.exploration_rounds >= self.rounds {
            return Err(Error::invalid(format!(
                "exploration rounds ({}) must be fewer than total rounds ({})",
                self.exploration_rounds, self.rounds
            )));
        }
        if self.encoder_epochs() > self.local_epochs {
            return Err(Error::invalid("encoder epochs exceed local epochs"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::invalid("participation fraction must lie in (0, 1]"));
        }
        if self.ifca_restart.failure_window == 0 {
            return Err(Error::invalid("failure window must be positive"));
        }
        Ok(())
    }

    pub fn encoder_epochs(&self) -> usize {
        self.encoder_epochs.unwrap_or(self.local_epochs)
    }

    /// Exploration only exists in CP-CFL; the baselines select from round 0.
    pub fn effective_exploration_rounds(&self) -> usize {
        match self.algorithm {
            Algorithm::CpCfl => self.exploration_rounds,
            _ => 0,
        }
    }
}
