//! Centralized self-supervised pre-training of the encoder and the
//! supervised/linear-probe helpers used to compare encoders.

pub mod augment;
pub mod losses;
pub mod probe;
pub mod trainer;

pub use crate::datagen::UnlabeledDataset;
pub use crate::nn::PretrainMethod;
pub use augment::{augment, AugmentConfig};
pub use losses::{
    byol_loss, interleaved_pairs, siamese_loss_with_grad, simclr_loss, simclr_loss_with_grad, simsiam_loss,
    SiameseLoss, SiameseObjective,
};
pub use probe::{linear_evaluation, supervised_pretrain, ProbeConfig};
pub use trainer::{momentum_update, pretrain_encoder, PretrainConfig, PretrainOutcome};
