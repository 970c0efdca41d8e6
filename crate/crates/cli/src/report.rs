//! Human-readable summaries of output directories.

use std::fmt::Write as _;
use std::path::Path;

use cpcfl_core::federation::RunStatus;

use crate::error::{CliError, Result};
use crate::experiment::{format_table, parse_results_csv, summarize};
use crate::pipeline::{read_text, FederateSummary, PretrainSummary};

pub fn pretrain_text(s: &PretrainSummary) -> String {
    let mut out = String::from("variant  method      epochs  batch  lr        linear_eval\n");
    for v in &s.variants {
        let _ = writeln!(
            out,
            "{:>7}  {:<10}  {:>6}  {:>5}  {:<8}  {:.4}{}",
            v.index,
            v.method,
            v.epochs,
            v.batch_size,
            v.learning_rate,
            v.linear_eval,
            if v.selected { "  *" } else { "" }
        );
    }
    let _ = writeln!(out, "relevance score: {:.4}", s.relevance);
    out
}

pub fn federate_text(s: &FederateSummary) -> String {
    let e = &s.final_evaluation;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} with {} cluster(s), seed {}: {} of {} rounds",
        s.algorithm.name(),
        s.clusters,
        s.seed,
        s.rounds_run,
        s.rounds_configured
    );
    match s.status {
        RunStatus::Completed => out.push_str("status: completed\n"),
        RunStatus::ClusteringFailure { round, restarts } => {
            let _ = writeln!(out, "status: clustering failure at round {round} after {restarts} restarts");
        }
    }
    let _ = writeln!(out, "restarts: {}", s.restarts);
    let _ = writeln!(out, "mean accuracy: {:.4}", e.mean_accuracy);
    let _ = writeln!(out, "f1 macro / weighted: {:.4} / {:.4}", e.f1_macro, e.f1_weighted);
    let _ = writeln!(out, "auroc ovr macro / weighted: {:.4} / {:.4}", e.auroc_ovr_macro, e.auroc_ovr_weighted);
    let _ = writeln!(out, "auroc ovo macro / weighted: {:.4} / {:.4}", e.auroc_ovo_macro, e.auroc_ovo_weighted);
    let _ = writeln!(
        out,
        "final ARI: {:.4}; exact cluster recovery: {}",
        s.final_ari,
        s.first_exact_round.map_or("never".to_string(), |t| format!("round {t}"))
    );
    let _ = writeln!(
        out,
        "communication cost per client: {} model units ({} scalars)",
        s.comm_cost.units, s.comm_cost.scalars
    );
    out
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Detects what kind of directory `dir` is and summarizes it.
pub fn describe(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    if dir.join("results.csv").is_file() && dir.join("manifest.toml").is_file() {
        let rows = parse_results_csv(&read_text(&dir.join("results.csv"))?)?;
        if rows.is_empty() {
            return Ok("no completed trials\n".into());
        }
        return Ok(format_table(&summarize(&rows)?));
    }
    if dir.join("history.jsonl").is_file() {
        return Ok(federate_text(&parse_json(&dir.join("summary.json"))?));
    }
    if dir.join("sweep.csv").is_file() {
        return Ok(pretrain_text(&parse_json(&dir.join("summary.json"))?));
    }
    if dir.join("class_counts.txt").is_file() {
        return read_text(&dir.join("class_counts.txt"));
    }
    Err(CliError::Usage(format!("{} does not look like a cpcfl output directory", dir.display())))
}
