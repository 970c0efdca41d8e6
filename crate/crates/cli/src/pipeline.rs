//! The stages behind the subcommands. Each stage reads its inputs, writes
//! a self-describing output directory and returns a summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use cpcfl_core::datagen::{
    generate_synthetic, load_dataset, load_idx, partition_clients, partition_manifest_csv, relevance_score,
    save_dataset, ClientDataset, LabeledDataset, StoredDataset, UnlabeledDataset,
};
use cpcfl_core::federation::{
    run_federation, Algorithm, ClusterModelPool, CommCostSummary, FederationConfig, RunStatus,
};
use cpcfl_core::metrics::{clustering_agreement, EvaluationReport};
use cpcfl_core::nn::{build_model, load_checkpoint, save_checkpoint, ArchConfig, ModelParams, Sequential};
use cpcfl_core::pretrain::{linear_evaluation, pretrain_encoder, supervised_pretrain, PretrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{to_toml, FederateFile, GenerateConfig, PretrainFile, PretrainMode, Source};
use crate::error::{CliError, Result};

pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// `path` expressed relative to the directory `base`, falling back to the
/// absolute path when the two share no root.
pub fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (Ok(path), Ok(base)) = (std::path::absolute(path), std::path::absolute(base)) else {
        return path.to_owned();
    };
    let p: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path;
    }
    let mut rel: PathBuf = b[common..].iter().map(|_| Component::ParentDir).collect();
    rel.extend(&p[common..]);
    rel
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

fn client_file(dir: &Path, id: usize, part: &str) -> PathBuf {
    dir.join("clients").join(format!("client_{id:03}_{part}.bin"))
}

/// Provenance of one client, stored next to its data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: usize,
    pub true_cluster: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_source: Vec<usize>,
    pub test_source: Vec<usize>,
}

/// Everything `generate` writes, loaded back.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub unlabeled: UnlabeledDataset,
    pub clients: Vec<ClientDataset>,
}

impl DataSet {
    pub fn input_dim(&self) -> usize {
        self.train.dim()
    }

    pub fn classes(&self) -> usize {
        self.train.class_count
    }

    pub fn truth(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.true_cluster).collect()
    }
}

fn source_pools(cfg: &GenerateConfig) -> Result<(LabeledDataset, LabeledDataset, UnlabeledDataset)> {
    match cfg.source {
        Source::Synthetic => {
            let d = generate_synthetic(&cfg.synthetic)?;
            Ok((d.train, d.test, d.unlabeled))
        }
        Source::Idx => {
            let idx = cfg
                .idx
                .as_ref()
                .ok_or_else(|| CliError::Usage("source = \"idx\" needs an [idx] table".into()))?;
            let k = Some(idx.classes);
            let train = load_idx(&idx.train_images, &idx.train_labels, k)?;
            let test = load_idx(&idx.test_images, &idx.test_labels, k)?;
            let unlabeled = match (&idx.unlabeled_images, &idx.unlabeled_labels) {
                (Some(i), Some(l)) => load_idx(i, l, None)?.unlabeled(),
                (None, None) => train.unlabeled(),
                _ => {
                    return Err(CliError::Usage(
                        "unlabeled_images and unlabeled_labels must be given together".into(),
                    ))
                }
            };
            Ok((train, test, unlabeled))
        }
    }
}

/// Per-client class counts as an aligned text table.
pub fn class_count_table(clients: &[ClientDataset]) -> String {
    let k = clients.first().map_or(0, |c| c.train.class_count);
    let mut out = format!("{:>6} {:>5}", "client", "group");
    for c in 0..k {
        let _ = write!(out, " {:>4}", format!("c{c}"));
    }
    out.push_str("  total\n");
    for c in clients {
        let _ = write!(out, "{:>6} {:>5}", c.client_id, c.true_cluster);
        for n in c.train.class_counts() {
            let _ = write!(out, " {n:>4}");
        }
        let _ = writeln!(out, "  {:>5}", c.train.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub seed: u64,
    pub input_dim: usize,
    pub classes: usize,
    pub train_pool: usize,
    pub test_pool: usize,
    pub unlabeled_pool: usize,
    pub clients: usize,
    pub groups: usize,
}

/// Builds the pools and the client partition and writes them under `out`.
/// Returns the summary and the class-count table.
pub fn generate(cfg: &GenerateConfig, out: &Path) -> Result<(GenerateSummary, String)> {
    let (train, test, unlabeled) = source_pools(cfg)?;
    let clients = partition_clients(&train, &test, &cfg.partition)?;

    write_file(&out.join(CONFIG_SNAPSHOT), to_toml(cfg)?)?;
    std::fs::create_dir_all(out.join("pools")).map_err(CliError::io(out.join("pools")))?;
    save_dataset(&out.join("pools/train.bin"), &StoredDataset::Labeled(train.clone()))?;
    save_dataset(&out.join("pools/test.bin"), &StoredDataset::Labeled(test.clone()))?;
    save_dataset(&out.join("pools/unlabeled.bin"), &StoredDataset::Unlabeled(unlabeled.clone()))?;
    std::fs::create_dir_all(out.join("clients")).map_err(CliError::io(out.join("clients")))?;
    let mut entries = Vec::with_capacity(clients.len());
    for c in &clients {
        save_dataset(&client_file(out, c.client_id, "train"), &StoredDataset::Labeled(c.train.clone()))?;
        save_dataset(&client_file(out, c.client_id, "test"), &StoredDataset::Labeled(c.test.clone()))?;
        entries.push(ClientEntry {
            client_id: c.client_id,
            true_cluster: c.true_cluster,
            train_size: c.train.len(),
            test_size: c.test.len(),
            train_source: c.train_source.clone(),
            test_source: c.test_source.clone(),
        });
    }
    write_file(&out.join("partition.csv"), partition_manifest_csv(&clients))?;
    write_json(&out.join("partition.json"), &entries)?;
    let table = class_count_table(&clients);
    write_file(&out.join("class_counts.txt"), &table)?;
    let summary = GenerateSummary {
        seed: cfg.seed,
        input_dim: train.dim(),
        classes: train.class_count,
        train_pool: train.len(),
        test_pool: test.len(),
        unlabeled_pool: unlabeled.len(),
        clients: clients.len(),
        groups: cfg.partition.num_groups,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok((summary, table))
}

fn data_error(dir: &Path, what: &str) -> CliError {
    CliError::Runtime(format!("{}: {what}; run `cpcfl generate` first", dir.display()))
}

pub fn load_data(dir: &Path) -> Result<DataSet> {
    if !dir.join("partition.json").is_file() {
        return Err(data_error(dir, "no partition.json"));
    }
    let train = load_dataset(&dir.join("pools/train.bin"))?.into_labeled()?;
    let test = load_dataset(&dir.join("pools/test.bin"))?.into_labeled()?;
    let unlabeled = load_dataset(&dir.join("pools/unlabeled.bin"))?.into_unlabeled();
    let entries: Vec<ClientEntry> = serde_json::from_str(&read_text(&dir.join("partition.json"))?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.join("partition.json").display())))?;
    let clients = entries
        .into_iter()
        .map(|e| {
            Ok(ClientDataset {
                client_id: e.client_id,
                train: load_dataset(&client_file(dir, e.client_id, "train"))?.into_labeled()?,
                test: load_dataset(&client_file(dir, e.client_id, "test"))?.into_labeled()?,
                true_cluster: e.true_cluster,
                train_source: e.train_source,
                test_source: e.test_source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if clients.is_empty() {
        return Err(data_error(dir, "no clients"));
    }
    if unlabeled.feature_dim() != train.dim() {
        return Err(CliError::Runtime(format!(
            "unlabeled pool has {} features, labeled pool {}",
            unlabeled.feature_dim(),
            train.dim()
        )));
    }
    Ok(DataSet {
        train,
        test,
        unlabeled,
        clients,
    })
}

/// Up to `per_class` rows of every class that `used` does not contain,
/// in pool order.
pub fn leftover_subset(pool: &LabeledDataset, used: &BTreeSet<usize>, per_class: usize) -> LabeledDataset {
    let mut taken = vec![0; pool.class_count];
    let idx: Vec<usize> = (0..pool.len())
        .filter(|i| !used.contains(i))
        .filter(|&i| {
            let y = pool.labels[i];
            taken[y] += 1;
            taken[y] <= per_class
        })
        .collect();
    pool.subset(&idx)
}

/// Labeled proxy sets for linear evaluation, built from pool rows no
/// client received.
pub fn proxy_sets(data: &DataSet, per_class: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let used_train: BTreeSet<usize> = data.clients.iter().flat_map(|c| c.train_source.iter().copied()).collect();
    let used_test: BTreeSet<usize> = data.clients.iter().flat_map(|c| c.test_source.iter().copied()).collect();
    let a = leftover_subset(&data.train, &used_train, per_class);
    let b = leftover_subset(&data.test, &used_test, per_class);
    if a.is_empty() || b.is_empty() {
        return Err(CliError::Runtime(
            "no pool samples left outside the clients for linear evaluation".into(),
        ));
    }
    Ok((a, b))
}

pub fn union_client_features(clients: &[ClientDataset]) -> Result<cpcfl_core::Tensor> {
    let rows: Vec<&[f64]> = clients.iter().flat_map(|c| (0..c.train.len()).map(|i| c.train.features.row(i))).collect();
    Ok(cpcfl_core::Tensor::from_rows(&rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub index: usize,
    pub method: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: Option<f64>,
    pub final_loss: Option<f64>,
    pub linear_eval: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub mode: PretrainMode,
    pub seed: u64,
    pub selected: usize,
    pub linear_eval: f64,
    /// Mean cosine similarity between pre-training pool and client data
    /// representations.
    pub relevance: f64,
    pub variants: Vec<VariantResult>,
    pub checkpoint: String,
}

fn losses_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", e + 1);
    }
    out
}

fn sweep_csv(rows: &[VariantResult]) -> String {
    let mut out = String::from("variant,method,epochs,batch_size,learning_rate,temperature,final_loss,linear_eval,selected\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.index,
            r.method,
            r.epochs,
            r.batch_size,
            r.learning_rate,
            r.temperature.map(|t| t.to_string()).unwrap_or_default(),
            r.final_loss.map(|t| t.to_string()).unwrap_or_default(),
            r.linear_eval,
            r.selected
        );
    }
    out
}

/// Index of the best score; the earliest wins ties.
fn best_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Pre-trains one encoder per variant (or one supervised encoder), keeps
/// the best by linear evaluation and writes it as `encoder.ckpt`.
pub fn pretrain(file: &PretrainFile, data: &DataSet, out: &Path) -> Result<PretrainSummary> {
    let arch = file.arch.build(data.input_dim(), data.classes());
    arch.validate()?;
    let (proxy_train, proxy_test) = proxy_sets(data, file.proxy_per_class)?;
    let mut probe = file.probe;
    probe.seed = file.seed;
    write_file(&out.join(CONFIG_SNAPSHOT), to_toml(file)?)?;

    let mut models: Vec<ModelParams> = Vec::new();
    let mut rows: Vec<VariantResult> = Vec::new();
    let mut losses: Vec<Vec<f64>> = Vec::new();
    match file.mode {
        PretrainMode::Supervised => {
            let init = build_model(&arch, file.seed)?;
            let model = supervised_pretrain(&init, &proxy_train, &probe)?;
            let score = linear_evaluation(&model, &proxy_train, &proxy_test, &probe)?;
            rows.push(VariantResult {
                index: 0,
                method: "supervised".into(),
                epochs: probe.epochs,
                batch_size: probe.batch_size,
                learning_rate: probe.learning_rate,
                temperature: None,
                final_loss: None,
                linear_eval: score,
                selected: false,
            });
            models.push(model);
            losses.push(Vec::new());
        }
        PretrainMode::Contrastive => {
            if file.variants.is_empty() {
                return Err(CliError::Usage("contrastive pre-training needs at least one [[variants]] entry".into()));
            }
            for (i, v) in file.variants.iter().enumerate() {
                let cfg = PretrainConfig {
                    seed: file.seed,
                    ..v.clone()
                };
                cfg.validate()?;
                let mut parch = arch.clone();
                parch.projection = Some(cfg.projection());
                let init = build_model(&parch, file.seed)?;
                log::info!("pre-training variant {i} ({}, {} epochs)", cfg.method.name(), cfg.epochs);
                let outcome = pretrain_encoder(&init, &data.unlabeled, &cfg)?;
                let score = linear_evaluation(&outcome.model, &proxy_train, &proxy_test, &probe)?;
                log::info!("variant {i}: linear evaluation {score:.4}");
                let dir = out.join("variants").join(format!("{i:02}"));
                write_file(&dir.join(CONFIG_SNAPSHOT), to_toml(&cfg)?)?;
                write_file(&dir.join("losses.csv"), losses_csv(&outcome.epoch_losses))?;
                rows.push(VariantResult {
                    index: i,
                    method: cfg.method.name().into(),
                    epochs: cfg.epochs,
                    batch_size: cfg.batch_size,
                    learning_rate: cfg.learning_rate,
                    temperature: cfg.temperature,
                    final_loss: outcome.epoch_losses.last().copied(),
                    linear_eval: score,
                    selected: false,
                });
                models.push(outcome.model);
                losses.push(outcome.epoch_losses);
            }
        }
    }

    let best = best_index(&rows.iter().map(|r| r.linear_eval).collect::<Vec<_>>());
    rows[best].selected = true;
    let model = models.swap_remove(best).without_pretraining_heads();
    let client_x = union_client_features(&data.clients)?;
    let n = file
        .relevance_samples
        .min(data.unlabeled.len())
        .min(client_x.rows());
    let relevance = relevance_score(&model, &data.unlabeled.samples, &client_x, n, file.seed)?;

    let ckpt = out.join("encoder.ckpt");
    save_checkpoint(&model, &ckpt)?;
    write_file(&out.join("losses.csv"), losses_csv(&losses[best]))?;
    write_file(&out.join("sweep.csv"), sweep_csv(&rows))?;
    let summary = PretrainSummary {
        mode: file.mode,
        seed: file.seed,
        selected: best,
        linear_eval: rows[best].linear_eval,
        relevance,
        variants: rows,
        checkpoint: "encoder.ckpt".into(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederateSummary {
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub seed: u64,
    pub rounds_configured: usize,
    pub rounds_run: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    pub restarts: usize,
    pub pretrained_encoder: bool,
    /// ARI between the last round's clustering and the true groups.
    pub final_ari: f64,
    /// First round whose clustering matches the true groups exactly.
    pub first_exact_round: Option<usize>,
    pub comm_cost: CommCostSummary,
    pub final_evaluation: EvaluationReport,
}

impl FederateSummary {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::ClusteringFailure { .. })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_csv(history: &cpcfl_core::federation::RunHistory) -> String {
    let mut out = String::from(
        "round,phase,mean_train_loss,comm_cost_units,restarts,cluster_sizes,mean_accuracy,f1_macro,f1_weighted,\
         auroc_ovr_macro,auroc_ovr_weighted,auroc_ovo_macro,auroc_ovo_weighted\n",
    );
    for r in &history.records {
        let e = r.evaluation.as_ref();
        let sizes: Vec<String> = r.cluster_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            match r.phase {
                cpcfl_core::federation::Phase::Explore => "explore",
                cpcfl_core::federation::Phase::Select => "select",
            },
            r.mean_train_loss,
            r.comm_cost_units,
            r.restarts,
            sizes.join(";"),
            fmt_opt(e.map(|e| e.mean_accuracy)),
            fmt_opt(e.map(|e| e.f1_macro)),
            fmt_opt(e.map(|e| e.f1_weighted)),
            fmt_opt(e.map(|e| e.auroc_ovr_macro)),
            fmt_opt(e.map(|e| e.auroc_ovr_weighted)),
            fmt_opt(e.map(|e| e.auroc_ovo_macro)),
            fmt_opt(e.map(|e| e.auroc_ovo_weighted)),
        );
    }
    out
}

fn encoder_from(path: &Path, data: &DataSet) -> Result<(ArchConfig, Sequential)> {
    let m = load_checkpoint(path)?.without_pretraining_heads();
    if m.arch.input_dim != data.input_dim() || m.arch.classes != data.classes() {
        return Err(CliError::Runtime(format!(
            "checkpoint {} expects {} inputs and {} classes, data has {} and {}",
            path.display(),
            m.arch.input_dim,
            m.arch.classes,
            data.input_dim(),
            data.classes()
        )));
    }
    Ok((m.arch, m.encoder))
}

/// FedAvg settings used when a FedAvg run provides the encoder for
/// another method.
pub fn fedavg_of(cfg: &FederationConfig) -> FederationConfig {
    FederationConfig {
        algorithm: Algorithm::FedAvg,
        clusters: 1,
        exploration_rounds: 0,
        pretrained_encoder: None,
        ..cfg.clone()
    }
}

/// Runs one federation and writes its history, metrics, trace, cost
/// summary and final checkpoints. A clustering failure is returned as a
/// summary with failure status, not as an error.
pub fn federate(file: &FederateFile, data: &DataSet, out: &Path) -> Result<FederateSummary> {
    let mut cfg = file.federation.clone();
    if file.encoder_from_fedavg {
        if cfg.pretrained_encoder.is_some() {
            return Err(CliError::Usage(
                "encoder_from_fedavg and federation.pretrained_encoder are mutually exclusive".into(),
            ));
        }
        let sub = FederateFile {
            encoder_from_fedavg: false,
            federation: fedavg_of(&cfg),
            ..file.clone()
        };
        let dir = out.join("fedavg");
        log::info!("running FedAvg to obtain the encoder");
        federate(&sub, data, &dir)?;
        cfg.pretrained_encoder = Some(dir.join("checkpoints").join("cluster_0.ckpt"));
    }
    cfg.validate()?;
    // paths in a snapshot resolve against the snapshot's own directory
    let mut snapshot = FederateFile {
        federation: cfg.clone(),
        data: relative_to(&file.data, out),
        ..file.clone()
    };
    snapshot.federation.pretrained_encoder = cfg.pretrained_encoder.as_deref().map(|p| relative_to(p, out));
    write_file(&out.join(CONFIG_SNAPSHOT), to_toml(&snapshot)?)?;

    let (arch, encoder) = match &cfg.pretrained_encoder {
        Some(p) => {
            let (a, e) = encoder_from(p, data)?;
            (a, Some(e))
        }
        None => (file.arch.build(data.input_dim(), data.classes()), None),
    };
    arch.validate()?;
    let pool = ClusterModelPool::initialize(&arch, cfg.clusters, cfg.seed, encoder.as_ref())?;
    log::info!(
        "federating with {} ({} clusters, {} rounds, {} clients)",
        cfg.algorithm.name(),
        cfg.clusters,
        cfg.rounds,
        data.clients.len()
    );
    let outcome = run_federation(&cfg, &data.clients, pool)?;
    let history = &outcome.history;
    let trace = history.trace(data.truth());

    write_file(&out.join("history.jsonl"), history.to_jsonl()?)?;
    write_file(&out.join("metrics.csv"), metrics_csv(history))?;
    write_file(&out.join("trace.csv"), trace.to_csv())?;
    let model_size = outcome.pool.models[0].transmitted_size();
    let cost = CommCostSummary::new(cfg.algorithm, history.records.len(), cfg.clusters, model_size);
    write_json(&out.join("comm_cost.json"), &cost)?;
    for (n, m) in outcome.pool.models.iter().enumerate() {
        save_checkpoint(m, out.join("checkpoints").join(format!("cluster_{n}.ckpt")))?;
    }

    let last = history.records.len().saturating_sub(1);
    let mut first_exact = None;
    for t in 0..history.records.len() {
        if clustering_agreement(&trace, t)? == 1.0 {
            first_exact = Some(t);
            break;
        }
    }
    let final_evaluation = history
        .final_evaluation()
        .cloned()
        .ok_or_else(|| CliError::Runtime("run produced no evaluation".into()))?;
    let summary = FederateSummary {
        algorithm: cfg.algorithm,
        clusters: cfg.clusters,
        seed: cfg.seed,
        rounds_configured: cfg.rounds,
        rounds_run: history.records.len(),
        status: outcome.status.clone(),
        restarts: history.restarts(),
        pretrained_encoder: cfg.pretrained_encoder.is_some(),
        final_ari: clustering_agreement(&trace, last)?,
        first_exact_round: first_exact,
        comm_cost: cost,
        final_evaluation,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
