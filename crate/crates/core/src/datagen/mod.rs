//! Synthetic data, real-data loading, client partitioning and dataset
//! relevance.

pub mod container;
pub mod dataset;
pub mod idx;
pub mod partition;
pub mod relevance;
pub mod synthetic;

pub use container::{load_dataset, read_dataset, save_dataset, write_dataset, StoredDataset};
pub use dataset::{LabeledDataset, UnlabeledDataset};
pub use idx::{load_idx, parse_idx};
pub use partition::{class_windows, partition_clients, partition_manifest_csv, ClientDataset, PartitionSpec};
pub use relevance::{relevance_score, DEFAULT_SAMPLE_N};
pub use synthetic::{generate_synthetic, translate, SyntheticData, SyntheticSpec};
