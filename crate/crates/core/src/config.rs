//! Experiment configuration: presets, a flat JSON file and command-line
//! overrides, merged in that order of precedence.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpaflError};
use crate::fl::RoundConfig;
use crate::strategies::StrategyId;

pub const PRESETS: [&str; 3] = ["fmnist-lenet", "cifar10-cnn7", "desk-mlp"];
const MODELS: &str = "lenet, cnn7, mlp";
const DATASETS: &str = "synthetic, idx";

/// Every settable key. All optional: unset keys fall back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    /// Hyperparameter preset: fmnist-lenet, cifar10-cnn7 or desk-mlp.
    #[arg(long)]
    pub preset: Option<String>,
    /// Model: lenet, cnn7 or mlp.
    #[arg(long)]
    pub model: Option<String>,
    /// Hidden widths of the mlp model.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Output width of cnn7 (defaults to the number of classes).
    #[arg(long)]
    pub cnn7_outputs: Option<usize>,
    /// Dataset source: synthetic or idx.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub synth_classes: Option<usize>,
    #[arg(long)]
    pub synth_dim: Option<usize>,
    #[arg(long)]
    pub synth_per_class: Option<usize>,
    #[arg(long)]
    pub synth_spread: Option<f64>,
    #[arg(long)]
    pub idx_images: Option<PathBuf>,
    #[arg(long)]
    pub idx_labels: Option<PathBuf>,
    /// spafl, spafl_no_importance, fedavg, local_only or thresholds_only.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Total number of clients N.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Clients sampled per round K.
    #[arg(long)]
    pub clients_per_round: Option<usize>,
    /// Communication rounds T.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Local epochs E.
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dirichlet_beta: Option<f64>,
    #[arg(long)]
    pub min_per_client: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate every this many rounds (the last round is always evaluated).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Dump mask images every this many rounds; 0 disables.
    #[arg(long)]
    pub dump_masks_every: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dump_clients: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Threads for client training; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),* $(,)?) => {
        ConfigOverrides { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ConfigOverrides {
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| SpaflError::config(format!("invalid config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpaflError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `top` win over those in `self`.
    pub fn merged_with(self, top: ConfigOverrides) -> Self {
        let base = self;
        overlay!(
            base, top, preset, model, hidden, cnn7_outputs, dataset, synth_classes, synth_dim, synth_per_class,
            synth_spread, idx_images, idx_labels, strategy, clients, clients_per_round, rounds, local_epochs, lr,
            lr_decay, momentum, alpha, batch_size, dirichlet_beta, min_per_client, test_fraction, seed, eval_every,
            dump_masks_every, dump_clients, out_dir, workers,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Lenet,
    Cnn7 { outputs: Option<usize> },
    Mlp { hidden: Vec<usize> },
}

impl ModelSpec {
    /// Sample shape the model consumes, if fixed by the model.
    pub fn input_shape(&self) -> Option<Vec<usize>> {
        match self {
            ModelSpec::Lenet => Some(vec![1, 28, 28]),
            ModelSpec::Cnn7 { .. } => Some(vec![3, 32, 32]),
            ModelSpec::Mlp { .. } => None,
        }
    }
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub strategy: StrategyId,
    pub clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub dirichlet_beta: f64,
    pub min_per_client: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub dump_masks_every: usize,
    pub dump_clients: Vec<usize>,
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

fn preset_defaults(name: &str) -> Result<ConfigOverrides> {
    let common = ConfigOverrides {
        dataset: Some("synthetic".into()),
        strategy: Some("spafl".into()),
        lr_decay: Some(1.0),
        momentum: Some(0.9),
        min_per_client: Some(2),
        test_fraction: Some(0.2),
        seed: Some(0),
        eval_every: Some(1),
        dump_masks_every: Some(0),
        dump_clients: Some(vec![0]),
        out_dir: Some(PathBuf::from("out")),
        workers: Some(1),
        ..Default::default()
    };
    let specific = match name {
        "fmnist-lenet" => ConfigOverrides {
            model: Some("lenet".into()),
            synth_classes: Some(10),
            synth_per_class: Some(600),
            synth_spread: Some(0.5),
            clients: Some(100),
            clients_per_round: Some(10),
            rounds: Some(500),
            local_epochs: Some(5),
            lr: Some(0.001),
            alpha: Some(0.002),
            batch_size: Some(64),
            dirichlet_beta: Some(0.2),
            ..Default::default()
        },
        "cifar10-cnn7" => ConfigOverrides {
            model: Some("cnn7".into()),
            synth_classes: Some(10),
            synth_per_class: Some(600),
            synth_spread: Some(0.5),
            clients: Some(100),
            clients_per_round: Some(10),
            rounds: Some(500),
            local_epochs: Some(5),
            lr: Some(0.01),
            alpha: Some(0.00015),
            batch_size: Some(16),
            dirichlet_beta: Some(0.1),
            ..Default::default()
        },
        "desk-mlp" => ConfigOverrides {
            model: Some("mlp".into()),
            hidden: Some(DESK_HIDDEN.to_vec()),
            synth_classes: Some(10),
            synth_dim: Some(64),
            synth_per_class: Some(200),
            synth_spread: Some(DESK_SPREAD),
            clients: Some(20),
            clients_per_round: Some(5),
            rounds: Some(60),
            local_epochs: Some(3),
            lr: Some(DESK_LR),
            alpha: Some(DESK_ALPHA),
            batch_size: Some(DESK_BATCH),
            dirichlet_beta: Some(0.1),
            ..Default::default()
        },
        other => {
            return Err(SpaflError::config(format!(
                "unknown preset '{other}'; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(common.merged_with(specific))
}

const DESK_HIDDEN: [usize; 2] = [128, 64];
const DESK_SPREAD: f64 = 0.25;
const DESK_LR: f64 = 0.02;
const DESK_ALPHA: f64 = 0.003;
const DESK_BATCH: usize = 16;

fn default_preset_for(model: Option<&str>) -> &'static str {
    match model {
        Some("lenet") => "fmnist-lenet",
        Some("cnn7") => "cifar10-cnn7",
        _ => "desk-mlp",
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| SpaflError::config(format!("missing required key '{key}'")))
}

impl ExperimentConfig {
    /// Resolves file and flag settings against the selected preset.
    pub fn resolve(file: ConfigOverrides, flags: ConfigOverrides) -> Result<Self> {
        let user = file.merged_with(flags);
        let model_hint = user.model.as_deref().map(str::to_ascii_lowercase);
        let preset = user
            .preset
            .clone()
            .unwrap_or_else(|| default_preset_for(model_hint.as_deref()).to_string());
        let c = preset_defaults(&preset)?.merged_with(user);

        let model = match required(c.model, "model")?.to_ascii_lowercase().as_str() {
            "lenet" => ModelSpec::Lenet,
            "cnn7" => ModelSpec::Cnn7 {
                outputs: c.cnn7_outputs,
            },
            "mlp" => ModelSpec::Mlp {
                hidden: c.hidden.unwrap_or_else(|| DESK_HIDDEN.to_vec()),
            },
            other => {
                return Err(SpaflError::config(format!("unknown model '{other}'; valid models: {MODELS}")));
            }
        };

        let dataset = match required(c.dataset, "dataset")?.to_ascii_lowercase().as_str() {
            "synthetic" => {
                let fixed: Option<usize> = model.input_shape().map(|s| s.iter().product());
                let dim = match (fixed, c.synth_dim) {
                    (Some(f), Some(d)) if f != d => {
                        return Err(SpaflError::config(format!(
                            "synth_dim {d} does not match the model input size {f}"
                        )));
                    }
                    (Some(f), _) => f,
                    (None, Some(d)) => d,
                    (None, None) => 64,
                };
                DatasetSpec::Synthetic {
                    classes: required(c.synth_classes, "synth_classes")?,
                    dim,
                    per_class: required(c.synth_per_class, "synth_per_class")?,
                    spread: required(c.synth_spread, "synth_spread")?,
                }
            }
            "idx" => DatasetSpec::Idx {
                images: required(c.idx_images, "idx_images")?,
                labels: required(c.idx_labels, "idx_labels")?,
            },
            other => {
                return Err(SpaflError::config(format!(
                    "unknown dataset '{other}'; valid datasets: {DATASETS}"
                )));
            }
        };

        let cfg = ExperimentConfig {
            preset,
            dataset,
            model,
            strategy: required(c.strategy, "strategy")?.parse()?,
            clients: required(c.clients, "clients")?,
            clients_per_round: required(c.clients_per_round, "clients_per_round")?,
            rounds: required(c.rounds, "rounds")?,
            local_epochs: required(c.local_epochs, "local_epochs")?,
            lr: required(c.lr, "lr")?,
            lr_decay: required(c.lr_decay, "lr_decay")?,
            momentum: required(c.momentum, "momentum")?,
            alpha: required(c.alpha, "alpha")?,
            batch_size: required(c.batch_size, "batch_size")?,
            dirichlet_beta: required(c.dirichlet_beta, "dirichlet_beta")?,
            min_per_client: required(c.min_per_client, "min_per_client")?,
            test_fraction: required(c.test_fraction, "test_fraction")?,
            seed: required(c.seed, "seed")?,
            eval_every: required(c.eval_every, "eval_every")?,
            dump_masks_every: required(c.dump_masks_every, "dump_masks_every")?,
            dump_clients: required(c.dump_clients, "dump_clients")?,
            out_dir: required(c.out_dir, "out_dir")?,
            workers: required(c.workers, "workers")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The desk-scale preset with everything else at its defaults.
    pub fn preset(name: &str) -> Result<Self> {
        Self::resolve(
            ConfigOverrides {
                preset: Some(name.into()),
                ..Default::default()
            },
            ConfigOverrides::default(),
        )
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            n_clients: self.clients,
            clients_per_round: self.clients_per_round,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            alpha: self.alpha,
            momentum: self.momentum,
            batch_size: self.batch_size,
            strategy: self.strategy,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.round_config().validate()?;
        if !(self.dirichlet_beta > 0.0 && self.dirichlet_beta.is_finite()) {
            return Err(SpaflError::config(format!(
                "dirichlet_beta must be > 0, got {}",
                self.dirichlet_beta
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SpaflError::config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.eval_every == 0 {
            return Err(SpaflError::config("eval_every must be >= 1"));
        }
        if let Some(&bad) = self.dump_clients.iter().find(|&&c| c >= self.clients) {
            return Err(SpaflError::config(format!("dump client {bad} is not below N = {}", self.clients)));
        }
        if let ModelSpec::Mlp { hidden } = &self.model {
            if hidden.contains(&0) {
                return Err(SpaflError::config("mlp hidden widths must be >= 1"));
            }
        }
        if let DatasetSpec::Synthetic {
            classes,
            dim,
            per_class,
            spread,
        } = &self.dataset
        {
            if *classes < 2 || *dim == 0 || *per_class == 0 || !(*spread >= 0.0 && spread.is_finite()) {
                return Err(SpaflError::config(
                    "synthetic data needs synth_classes >= 2, synth_dim >= 1, synth_per_class >= 1, synth_spread >= 0",
                ));
            }
        }
        Ok(())
    }
}
