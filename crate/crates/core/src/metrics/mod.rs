//! Evaluation: classification scores, clustering agreement and
//! multi-trial statistics.

pub mod classification;
pub mod clustering;
pub mod report;
pub mod stats;

pub use classification::{accuracy, auroc, binary_auroc, confusion_matrix, f1_scores, AurocResult, Average, Scheme};
pub use clustering::{adjusted_rand_index, clustering_agreement, ClusterTrace};
pub use report::{evaluate_pool, pooled_scores, EvaluationReport, PooledScores};
pub use stats::{trial_statistics, TrialStatistics};
