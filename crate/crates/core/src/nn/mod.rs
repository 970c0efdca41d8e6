//! Minimal dense-network engine: layers with explicit backward passes,
//! losses, Adam, model builders and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{BatchNorm, Dense, Layer, LayerKind, LayerSpec, Mode, Sequential, Tape};
pub use loss::{cosine_similarity, cosine_similarity_flagged, cross_entropy, cross_entropy_with_grad, one_hot};
pub use model::{build_classifier, build_model, ArchConfig, Branch, HeadVariant, ModelGrads, ModelParams, ModelTape, PretrainMethod, ProjectionConfig};
