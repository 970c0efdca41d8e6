use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub trials: usize,
    pub mean: f64,
    /// Population standard deviation (divides by n).
    pub sd: f64,
    /// Sample standard deviation (divides by n - 1).
    pub sample_sd: f64,
}

/// Mean and spread of per-trial scores. Published tables are reproduced
/// by the population form; the sample form is provided alongside.
pub fn trial_statistics(scores: &[f64]) -> Result<TrialStatistics> {
    if scores.len() < 2 {
        return Err(Error::invalid(format!(
            "standard deviation needs at least 2 trials, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|s| (s - mean).powi(2)).sum();
    Ok(TrialStatistics {
        trials: scores.len(),
        mean,
        sd: (ss / n).sqrt(),
        sample_sd: (ss / (n - 1.0)).sqrt(),
    })
}
