//! `cpcfl`: data generation, encoder pre-training, federation runs and
//! multi-trial experiments from TOML configs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentManifest, FederateFile, GenerateConfig, PretrainFile};
use crate::error::{CliError, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CPCFL_OUT";

#[derive(Debug, Parser)]
#[command(name = "cpcfl", version, about = "Contrastive pre-training based clustered federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or ingest) the data pools and partition them into clients.
    Generate(StageArgs),
    /// Pre-train encoder variants and keep the best by linear evaluation.
    Pretrain(StageArgs),
    /// Run FedAvg, IFCA or CP-CFL on a generated client set.
    Federate(StageArgs),
    /// Run every trial of an experiment manifest and tabulate the methods.
    Experiment(ExperimentArgs),
    /// Summarize an existing output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Stage config file (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: $CPCFL_OUT/<config name>, or runs/<config name>].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment manifest (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the manifest's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the manifest's output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Override the manifest's trial count.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A directory written by any other subcommand.
    pub dir: PathBuf,
    /// Also write the report to this directory as report.txt.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn out_dir(args_out: &Option<PathBuf>, config: &Path) -> PathBuf {
    args_out.clone().unwrap_or_else(|| default_out(&stem(config)))
}

/// Runs one parsed command. Text meant for the user goes to stdout unless
/// `quiet` is set; progress goes through `log`.
pub fn run(cli: Cli) -> Result<()> {
    let say = |s: &str| {
        if !cli.quiet {
            print!("{s}");
        }
    };
    match &cli.command {
        Command::Generate(a) => {
            let mut cfg: GenerateConfig = config::load(&a.config)?;
            cfg.resolve_paths(&config::config_dir(&a.config));
            let seed = a.seed.unwrap_or(cfg.seed);
            let cfg = cfg.with_seed(seed);
            let out = out_dir(&a.out, &a.config);
            let (summary, table) = pipeline::generate(&cfg, &out)?;
            say(&table);
            say(&format!(
                "{} clients in {} groups, {} features, {} classes -> {}\n",
                summary.clients,
                summary.groups,
                summary.input_dim,
                summary.classes,
                out.display()
            ));
        }
        Command::Pretrain(a) => {
            let mut file: PretrainFile = config::load(&a.config)?;
            file.data = config::resolve(&config::config_dir(&a.config), &file.data);
            if let Some(s) = a.seed {
                file.seed = s;
            }
            let data = pipeline::load_data(&file.data)?;
            let out = out_dir(&a.out, &a.config);
            let s = pipeline::pretrain(&file, &data, &out)?;
            say(&report::pretrain_text(&s));
            say(&format!("encoder -> {}\n", out.join(&s.checkpoint).display()));
        }
        Command::Federate(a) => {
            let mut file: FederateFile = config::load(&a.config)?;
            let base = config::config_dir(&a.config);
            file.data = config::resolve(&base, &file.data);
            if let Some(p) = &file.federation.pretrained_encoder {
                file.federation.pretrained_encoder = Some(config::resolve(&base, p));
            }
            if let Some(s) = a.seed {
                file.federation.seed = s;
            }
            file.federation.validate().map_err(|e| CliError::Config {
                path: a.config.clone(),
                message: e.to_string(),
            })?;
            let data = pipeline::load_data(&file.data)?;
            let out = out_dir(&a.out, &a.config);
            let s = pipeline::federate(&file, &data, &out)?;
            say(&report::federate_text(&s));
            if let cpcfl_core::federation::RunStatus::ClusteringFailure { round, restarts } = s.status {
                return Err(CliError::ClusteringFailure { round, restarts, dir: out });
            }
        }
        Command::Experiment(a) => {
            let mut manifest: ExperimentManifest = config::load(&a.config)?;
            let base = config::config_dir(&a.config);
            if let Some(s) = a.seed {
                manifest.base_seed = s;
            }
            if let Some(t) = a.trials {
                manifest.trials = t;
            }
            let out = match (&a.out, &manifest.output) {
                (Some(o), _) => o.clone(),
                (None, Some(o)) => config::resolve(&base, o),
                (None, None) => default_out(&manifest.name),
            };
            let stages = experiment::Stages::load(&manifest, &base)?;
            let (_, table) = experiment::run_experiment(&manifest, &stages, &out)?;
            say(&table);
            say(&format!("results -> {}\n", out.display()));
        }
        Command::Report(a) => {
            let text = report::describe(&a.dir)?;
            say(&text);
            if let Some(o) = &a.out {
                pipeline::write_file(&o.join("report.txt"), &text)?;
            }
        }
    }
    Ok(())
}
