//! Cluster-identity traces and agreement with ground truth.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-round cluster choices (0-based; `None` for clients that did not
/// participate) plus the true group of every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTrace {
    pub rounds: Vec<Vec<Option<usize>>>,
    pub truth: Vec<usize>,
}

impl ClusterTrace {
    /// Round x client matrix; absent clients are written as empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round");
        for u in 0..self.truth.len() {
            out.push_str(&format!(",client_{u}"));
        }
        out.push('\n');
        for (t, row) in self.rounds.iter().enumerate() {
            out.push_str(&t.to_string());
            for n in row {
                out.push(',');
                if let Some(n) = n {
                    out.push_str(&n.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand Index. When the expected-index correction degenerates
/// (both partitions trivial) identical partitions score 1 and others 0.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("partition lengths", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::invalid("ARI of empty partitions"));
    }
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len() as u64).max(f64::MIN_POSITIVE);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return Ok(if joint.len() == rows.len() && joint.len() == cols.len() { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// ARI between the choices made in round `t` and the true groups,
/// over the clients that participated in that round.
pub fn clustering_agreement(trace: &ClusterTrace, t: usize) -> Result<f64> {
    let row = trace
        .rounds
        .get(t)
        .ok_or_else(|| Error::invalid(format!("round {t} outside a history of {} rounds", trace.rounds.len())))?;
    if row.len() != trace.truth.len() {
        return Err(Error::dim("trace row", trace.truth.len(), row.len()));
    }
    let (chosen, truth): (Vec<usize>, Vec<usize>) = row
        .iter()
        .zip(&trace.truth)
        .filter_map(|(n, &g)| n.map(|n| (n, g)))
        .unzip();
    adjusted_rand_index(&chosen, &truth)
}
