//! Contrastive pre-training based clustered federated learning.
//!
//! The crate is split along the pipeline:
//!
//! - [`nn`]: dense layers, losses, Adam and model construction;
//! - [`pretrain`]: self-supervised encoder pre-training (SimCLR, BYOL,
//!   SimSiam) and linear evaluation;
//! - [`datagen`]: synthetic data, the grouped non-IID client partitioner,
//!   IDX ingestion and the dataset relevance score;
//! - [`federation`]: FedAvg, IFCA and the clustered loop with an
//!   exploration phase over a frozen pre-trained encoder;
//! - [`metrics`]: accuracy, F1, AUROC, ARI and multi-trial statistics.

pub mod datagen;
pub mod error;
pub mod federation;
mod io;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
