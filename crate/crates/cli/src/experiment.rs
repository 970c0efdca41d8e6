//! Multi-trial experiments: every trial regenerates the data with seed
//! `base_seed + i`, pre-trains the encoders its methods need and runs each
//! method, then the per-method scores are summarized as mean ± SD.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cpcfl_core::federation::{Algorithm, RunStatus};
use cpcfl_core::metrics::trial_statistics;
use cpcfl_core::nn::PretrainMethod;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, ExperimentManifest, FederateFile, GenerateConfig, PretrainFile, PretrainMode};
use crate::error::{CliError, Result};
use crate::pipeline::{self, write_file, FederateSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pretraining {
    None,
    Contrastive(PretrainMethod),
    Supervised,
    /// Encoder taken from a FedAvg run on the same clients.
    FedAvg,
}

impl Pretraining {
    pub fn name(self) -> &'static str {
        match self {
            Pretraining::None => "none",
            Pretraining::Contrastive(m) => m.name(),
            Pretraining::Supervised => "supervised",
            Pretraining::FedAvg => "fedavg",
        }
    }
}

/// One table row: an algorithm and where its encoder comes from, written
/// `algorithm(pretraining)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub algorithm: Algorithm,
    pub pretraining: Pretraining,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        format!("{}({})", self.algorithm.name(), self.pretraining.name())
    }

    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.algorithm.name(), self.pretraining.name())
    }
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (alg, pre) = match s.split_once('(') {
            Some((a, rest)) => (
                a.trim(),
                rest.strip_suffix(')').ok_or_else(|| format!("method `{s}`: missing `)`"))?.trim(),
            ),
            None => (s, "none"),
        };
        let algorithm: Algorithm = alg.parse().map_err(|e| format!("method `{s}`: {e}"))?;
        let pretraining = match pre {
            "none" | "" => Pretraining::None,
            "supervised" => Pretraining::Supervised,
            "fedavg" => Pretraining::FedAvg,
            m => Pretraining::Contrastive(parse_ssl(m).ok_or_else(|| format!("method `{s}`: unknown pre-training `{m}`"))?),
        };
        if pretraining == Pretraining::FedAvg && algorithm == Algorithm::FedAvg {
            return Err(format!("method `{s}`: FedAvg cannot start from its own encoder"));
        }
        Ok(MethodSpec { algorithm, pretraining })
    }
}

fn parse_ssl(name: &str) -> Option<PretrainMethod> {
    [PretrainMethod::SimClr, PretrainMethod::Byol, PretrainMethod::SimSiam]
        .into_iter()
        .find(|m| m.name() == name)
}

/// The three stage configs an experiment is built from.
#[derive(Debug, Clone)]
pub struct Stages {
    pub generate: GenerateConfig,
    pub pretrain: PretrainFile,
    pub federate: FederateFile,
}

impl Stages {
    pub fn load(manifest: &ExperimentManifest, base: &Path) -> Result<Self> {
        let gpath = config::resolve(base, &manifest.generate);
        let mut generate: GenerateConfig = config::load(&gpath)?;
        generate.resolve_paths(&config::config_dir(&gpath));
        let pretrain: PretrainFile = config::load(&config::resolve(base, &manifest.pretrain))?;
        let fpath = config::resolve(base, &manifest.federate);
        let federate: FederateFile = config::load(&fpath)?;
        if federate.federation.pretrained_encoder.is_some() || federate.encoder_from_fedavg {
            return Err(CliError::Config {
                path: fpath,
                message: "experiments choose encoders per method; remove pretrained_encoder/encoder_from_fedavg".into(),
            });
        }
        Ok(Stages {
            generate,
            pretrain,
            federate,
        })
    }
}

pub fn parse_methods(manifest: &ExperimentManifest, stages: &Stages) -> Result<Vec<MethodSpec>> {
    if manifest.methods.is_empty() {
        return Err(CliError::Usage("experiment lists no methods".into()));
    }
    let mut out = Vec::new();
    for m in &manifest.methods {
        let spec: MethodSpec = m.parse().map_err(CliError::Usage)?;
        if let Pretraining::Contrastive(p) = spec.pretraining {
            if !stages.pretrain.variants.iter().any(|v| v.method == p) {
                return Err(CliError::Usage(format!(
                    "method {m} needs a {} entry in the pre-training variants",
                    p.name()
                )));
            }
        }
        if out.contains(&spec) {
            return Err(CliError::Usage(format!("method {m} listed twice")));
        }
        out.push(spec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub status: String,
    pub rounds_run: usize,
    pub restarts: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub auroc_ovr_macro: f64,
    pub auroc_ovr_weighted: f64,
    pub auroc_ovo_macro: f64,
    pub auroc_ovo_weighted: f64,
    pub final_ari: f64,
}

impl TrialRow {
    fn new(trial: usize, method: &MethodSpec, s: &FederateSummary) -> Self {
        let e = &s.final_evaluation;
        TrialRow {
            trial,
            seed: s.seed,
            method: method.label(),
            status: match s.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::ClusteringFailure { .. } => "clustering_failure".into(),
            },
            rounds_run: s.rounds_run,
            restarts: s.restarts,
            accuracy: e.mean_accuracy,
            f1_macro: e.f1_macro,
            f1_weighted: e.f1_weighted,
            auroc_ovr_macro: e.auroc_ovr_macro,
            auroc_ovr_weighted: e.auroc_ovr_weighted,
            auroc_ovo_macro: e.auroc_ovo_macro,
            auroc_ovo_weighted: e.auroc_ovo_weighted,
            final_ari: s.final_ari,
        }
    }

    fn metrics(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.f1_macro,
            self.f1_weighted,
            self.auroc_ovr_macro,
            self.auroc_ovr_weighted,
            self.auroc_ovo_macro,
            self.auroc_ovo_weighted,
        ]
    }
}

const METRIC_NAMES: [&str; 7] = [
    "accuracy",
    "f1_macro",
    "f1_weighted",
    "auroc_ovr_macro",
    "auroc_ovr_weighted",
    "auroc_ovo_macro",
    "auroc_ovo_weighted",
];

pub fn results_csv(rows: &[TrialRow]) -> String {
    let mut out = format!("trial,seed,method,status,rounds_run,restarts,{},final_ari\n", METRIC_NAMES.join(","));
    for r in rows {
        let m: Vec<String> = r.metrics().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial,
            r.seed,
            r.method,
            r.status,
            r.rounds_run,
            r.restarts,
            m.join(","),
            r.final_ari
        );
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<TrialRow>> {
    let bad = |line: usize| CliError::Runtime(format!("results.csv line {line} is malformed"));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(bad(i + 1));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i + 1));
        rows.push(TrialRow {
            trial: int(0)?,
            seed: f[1].parse().map_err(|_| bad(i + 1))?,
            method: f[2].to_string(),
            status: f[3].to_string(),
            rounds_run: int(4)?,
            restarts: int(5)?,
            accuracy: num(6)?,
            f1_macro: num(7)?,
            f1_weighted: num(8)?,
            auroc_ovr_macro: num(9)?,
            auroc_ovr_weighted: num(10)?,
            auroc_ovo_macro: num(11)?,
            auroc_ovo_weighted: num(12)?,
            final_ari: num(13)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    /// `(mean, sd)` per metric in percent; `sd` is `None` for one trial.
    pub metrics: BTreeMap<String, (f64, Option<f64>)>,
}

/// Per-method mean ± SD in the order methods first appear in `rows`.
pub fn summarize(rows: &[TrialRow]) -> Result<Vec<MethodStats>> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
    }
    order
        .into_iter()
        .map(|method| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.method == method).collect();
            let mut metrics = BTreeMap::new();
            for (k, name) in METRIC_NAMES.iter().enumerate() {
                let vals: Vec<f64> = mine.iter().map(|r| 100.0 * r.metrics()[k]).collect();
                let entry = if vals.len() >= 2 {
                    let s = trial_statistics(&vals)?;
                    (s.mean, Some(s.sd))
                } else {
                    (vals[0], None)
                };
                metrics.insert(name.to_string(), entry);
            }
            Ok(MethodStats {
                trials: mine.len(),
                failures: mine.iter().filter(|r| r.status != "completed").count(),
                method,
                metrics,
            })
        })
        .collect()
}

fn cell((mean, sd): (f64, Option<f64>)) -> String {
    match sd {
        Some(sd) => format!("{mean:.2} ± {sd:.2}"),
        None => format!("{mean:.2} ± n/a"),
    }
}

/// Mean ± SD table (population SD over trials, values in percent).
pub fn format_table(stats: &[MethodStats]) -> String {
    let header = ["method", "trials", "failures"]
        .into_iter()
        .map(String::from)
        .chain(METRIC_NAMES.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>();
    let body: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            let mut row = vec![s.method.clone(), s.trials.to_string(), s.failures.to_string()];
            row.extend(METRIC_NAMES.iter().map(|m| cell(s.metrics[*m])));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header[c])
                .chain(body.iter().map(|r| &r[c]))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| {
                let pad = w - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for r in &body {
        out.push_str(&line(r));
    }
    out
}

fn trial_dir(root: &Path, trial: usize) -> PathBuf {
    root.join(format!("trial_{trial:02}"))
}

fn pretrain_for(stages: &Stages, kind: Pretraining, seed: u64) -> PretrainFile {
    let mut p = stages.pretrain.clone();
    p.seed = seed;
    match kind {
        Pretraining::Supervised => {
            p.mode = PretrainMode::Supervised;
            p.variants.clear();
        }
        Pretraining::Contrastive(m) => {
            p.mode = PretrainMode::Contrastive;
            p.variants.retain(|v| v.method == m);
        }
        Pretraining::None | Pretraining::FedAvg => unreachable!("no centralized pre-training"),
    }
    p
}

/// One full trial; returns a row per method in manifest order.
pub fn run_trial(stages: &Stages, methods: &[MethodSpec], trial: usize, seed: u64, root: &Path) -> Result<Vec<TrialRow>> {
    let dir = trial_dir(root, trial);
    log::info!("trial {trial} (seed {seed})");
    let gen = stages.generate.clone().with_seed(seed);
    pipeline::generate(&gen, &dir.join("data"))?;
    let data = pipeline::load_data(&dir.join("data"))?;

    let mut encoders: BTreeMap<Pretraining, PathBuf> = BTreeMap::new();
    for m in methods {
        let kind = m.pretraining;
        if matches!(kind, Pretraining::Contrastive(_) | Pretraining::Supervised) && !encoders.contains_key(&kind) {
            let out = dir.join(format!("pretrain_{}", kind.name()));
            pipeline::pretrain(&pretrain_for(stages, kind, seed), &data, &out)?;
            encoders.insert(kind, out.join("encoder.ckpt"));
        }
    }

    let fedavg_none = MethodSpec {
        algorithm: Algorithm::FedAvg,
        pretraining: Pretraining::None,
    };
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let mut file = stages.federate.clone();
        file.federation.seed = seed;
        file.federation.algorithm = m.algorithm;
        match m.algorithm {
            Algorithm::FedAvg => {
                file.federation.clusters = 1;
                file.federation.exploration_rounds = 0;
            }
            Algorithm::Ifca => file.federation.exploration_rounds = 0,
            Algorithm::CpCfl => {}
        }
        file.federation.pretrained_encoder = match m.pretraining {
            Pretraining::None => None,
            Pretraining::FedAvg => {
                let ckpt = dir.join("runs").join(fedavg_none.dir_name()).join("checkpoints/cluster_0.ckpt");
                if let std::collections::btree_map::Entry::Vacant(e) = encoders.entry(Pretraining::FedAvg) {
                    let mut fa = stages.federate.clone();
                    fa.federation = pipeline::fedavg_of(&file.federation);
                    pipeline::federate(&fa, &data, &dir.join("runs").join(fedavg_none.dir_name()))?;
                    e.insert(ckpt.clone());
                }
                Some(ckpt)
            }
            kind => Some(encoders[&kind].clone()),
        };
        let summary = pipeline::federate(&file, &data, &dir.join("runs").join(m.dir_name()))?;
        if *m == fedavg_none {
            encoders.insert(Pretraining::FedAvg, dir.join("runs").join(m.dir_name()).join("checkpoints/cluster_0.ckpt"));
        }
        log::info!(
            "trial {trial} {}: accuracy {:.4}{}",
            m.label(),
            summary.final_evaluation.mean_accuracy,
            if summary.failed() { " (clustering failure)" } else { "" }
        );
        rows.push(TrialRow::new(trial, m, &summary));
    }
    write_file(&dir.join("results.csv"), results_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub trials: usize,
    pub base_seed: u64,
    pub methods: Vec<String>,
    pub stats: Vec<MethodStats>,
}

/// Runs all trials (in parallel if the manifest allows) and writes
/// `results.csv`, `table.txt` and `summary.json` under `root`. If a trial
/// fails, the rows of the trials that finished are still written before
/// the error is returned.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    stages: &Stages,
    root: &Path,
) -> Result<(ExperimentSummary, String)> {
    if manifest.trials == 0 {
        return Err(CliError::Usage("trial count must be at least 1".into()));
    }
    let methods = parse_methods(manifest, stages)?;
    write_file(&root.join("manifest.toml"), config::to_toml(manifest)?)?;
    write_file(&root.join("stages/generate.toml"), config::to_toml(&stages.generate)?)?;
    write_file(&root.join("stages/pretrain.toml"), config::to_toml(&stages.pretrain)?)?;
    write_file(&root.join("stages/federate.toml"), config::to_toml(&stages.federate)?)?;

    let run = |i: usize| run_trial(stages, &methods, i, manifest.base_seed + i as u64, root);
    let results: Vec<Result<Vec<TrialRow>>> = if manifest.parallel {
        (0..manifest.trials).into_par_iter().map(run).collect()
    } else {
        (0..manifest.trials).map(run).collect()
    };

    let mut rows = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => {
                log::error!("trial {i} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    write_file(&root.join("results.csv"), results_csv(&rows))?;
    if let Some(e) = first_err {
        return Err(CliError::Runtime(format!(
            "experiment aborted ({e}); completed trials are in {}",
            root.join("results.csv").display()
        )));
    }
    let stats = summarize(&rows)?;
    let table = format_table(&stats);
    write_file(&root.join("table.txt"), &table)?;
    let summary = ExperimentSummary {
        name: manifest.name.clone(),
        trials: manifest.trials,
        base_seed: manifest.base_seed,
        methods: methods.iter().map(MethodSpec::label).collect(),
        stats,
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(&root.join("summary.json"), text)?;
    Ok((summary, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_labels_parse() {
        let m: MethodSpec = "ifca(fedavg)".parse().unwrap();
        assert_eq!(m.algorithm, Algorithm::Ifca);
        assert_eq!(m.pretraining, Pretraining::FedAvg);
        assert_eq!(m.label(), "ifca(fedavg)");
        let m: MethodSpec = "cpcfl(simclr)".parse().unwrap();
        assert_eq!(m.pretraining, Pretraining::Contrastive(PretrainMethod::SimClr));
        assert_eq!("fedavg".parse::<MethodSpec>().unwrap().pretraining, Pretraining::None);
        assert!("fedavg(fedavg)".parse::<MethodSpec>().is_err());
        assert!("ifca(moco)".parse::<MethodSpec>().is_err());
        assert!("ifca(simclr".parse::<MethodSpec>().is_err());
    }

    fn row(method: &str, acc: f64) -> TrialRow {
        TrialRow {
            trial: 0,
            seed: 0,
            method: method.into(),
            status: "completed".into(),
            rounds_run: 1,
            restarts: 0,
            accuracy: acc,
            f1_macro: acc,
            f1_weighted: acc,
            auroc_ovr_macro: 0.5,
            auroc_ovr_weighted: 0.5,
            auroc_ovo_macro: 0.5,
            auroc_ovo_weighted: 0.5,
            final_ari: 1.0,
        }
    }

    #[test]
    fn single_trial_has_no_sd() {
        let s = summarize(&[row("a", 0.5)]).unwrap();
        assert_eq!(s[0].metrics["accuracy"], (50.0, None));
        assert!(format_table(&s).contains("50.00 ± n/a"));
    }

    #[test]
    fn results_round_trip() {
        let rows = vec![row("fedavg(none)", 0.25), row("cpcfl(simclr)", 0.875)];
        assert_eq!(parse_results_csv(&results_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn table_keeps_method_order() {
        let s = summarize(&[row("b", 0.5), row("a", 0.7), row("b", 0.6)]).unwrap();
        assert_eq!(s[0].method, "b");
        assert_eq!(s[0].trials, 2);
        let (m, sd) = s[0].metrics["accuracy"];
        assert!((m - 55.0).abs() < 1e-9 && (sd.unwrap() - 5.0).abs() < 1e-9);
    }
}
