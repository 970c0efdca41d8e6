//! TOML schemas for every subcommand. Relative paths inside a config file
//! are resolved against the directory holding that file.

use std::path::{Path, PathBuf};

use cpcfl_core::datagen::{PartitionSpec, SyntheticSpec};
use cpcfl_core::federation::FederationConfig;
use cpcfl_core::nn::{ArchConfig, HeadVariant};
use cpcfl_core::pretrain::{PretrainConfig, ProbeConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Usage(format!("config file {} not found", path.display())),
        _ => CliError::Io {
            path: path.to_owned(),
            source: e,
        },
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_owned).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Images used as the unlabeled pre-training pool; defaults to the
    /// training images with labels dropped.
    #[serde(default)]
    pub unlabeled_images: Option<PathBuf>,
    #[serde(default)]
    pub unlabeled_labels: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_classes() -> usize {
    10
}

/// `cpcfl generate`. The top-level seed drives both data synthesis and
/// the client partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub source: Source,
    pub synthetic: SyntheticSpec,
    pub partition: PartitionSpec,
    pub idx: Option<IdxSource>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: 0,
            source: Source::Synthetic,
            synthetic: SyntheticSpec::default(),
            partition: PartitionSpec::default(),
            idx: None,
        }
    }
}

impl GenerateConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.partition.seed = seed;
        self
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(idx) = &mut self.idx {
            for p in [&mut idx.train_images, &mut idx.train_labels, &mut idx.test_images, &mut idx.test_labels] {
                *p = resolve(base, p);
            }
            for p in [&mut idx.unlabeled_images, &mut idx.unlabeled_labels].into_iter().flatten() {
                *p = resolve(base, p);
            }
        }
    }
}

/// Encoder and head shape; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub encoder_widths: Vec<usize>,
    pub representation_dim: usize,
    pub head: HeadVariant,
    pub head_hidden_width: Option<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        let a = ArchConfig::new(1, 1);
        ArchSpec {
            encoder_widths: a.encoder_widths,
            representation_dim: a.representation_dim,
            head: a.head,
            head_hidden_width: None,
        }
    }
}

impl ArchSpec {
    pub fn build(&self, input_dim: usize, classes: usize) -> ArchConfig {
        ArchConfig {
            input_dim,
            encoder_widths: self.encoder_widths.clone(),
            representation_dim: self.representation_dim,
            head: self.head,
            head_hidden_width: self.head_hidden_width,
            classes,
            projection: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMode {
    #[default]
    Contrastive,
    /// Cross-entropy training on the labeled server pool.
    Supervised,
}

/// `cpcfl pretrain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainFile {
    /// Output directory of `cpcfl generate`.
    pub data: PathBuf,
    pub seed: u64,
    pub mode: PretrainMode,
    pub arch: ArchSpec,
    pub probe: ProbeConfig,
    /// Labeled samples per class (taken from pool rows no client holds)
    /// for linear evaluation and supervised pre-training.
    pub proxy_per_class: usize,
    /// Samples per side for the relevance score.
    pub relevance_samples: usize,
    pub variants: Vec<PretrainConfig>,
}

impl Default for PretrainFile {
    fn default() -> Self {
        PretrainFile {
            data: PathBuf::from("data"),
            seed: 0,
            mode: PretrainMode::Contrastive,
            arch: ArchSpec::default(),
            probe: ProbeConfig::default(),
            proxy_per_class: 100,
            relevance_samples: cpcfl_core::datagen::DEFAULT_SAMPLE_N,
            variants: Vec::new(),
        }
    }
}

/// `cpcfl federate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederateFile {
    pub data: PathBuf,
    pub arch: ArchSpec,
    /// Run FedAvg first and start from its encoder (the IFCA(FedAvg) row).
    pub encoder_from_fedavg: bool,
    pub federation: FederationConfig,
}

impl Default for FederateFile {
    fn default() -> Self {
        FederateFile {
            data: PathBuf::from("data"),
            arch: ArchSpec::default(),
            encoder_from_fedavg: false,
            federation: FederationConfig::default(),
        }
    }
}

/// `cpcfl experiment`: references one config per stage and lists the
/// method rows, e.g. `"cpcfl(simclr)"` or `"ifca(fedavg)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    pub generate: PathBuf,
    pub pretrain: PathBuf,
    pub federate: PathBuf,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Defaults to the `--out` flag or `$CPCFL_OUT/<name>`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_trials() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_methods() -> Vec<String> {
    ["fedavg(none)", "fedavg(simclr)", "ifca(none)", "ifca(fedavg)", "cpcfl(simclr)"]
        .map(String::from)
        .to_vec()
}
