//! Drives a configured run and writes `metrics.csv`, `summary.json` and
//! optional mask images.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use crate::config::{DatasetSpec, ExperimentConfig, ModelSpec};
use crate::data::{client_split, dirichlet_partition, load_idx, synth_dataset, Dataset};
use crate::error::{Result, SpaflError};
use crate::fl::{derive_seed, Federation, RoundMetrics};
use crate::nn::Architecture;
use crate::pgm::dump_sparsity_pattern;
use crate::strategies::StrategyId;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: &str = "round,mean_acc,std_acc,overall_density,per_layer_density,cum_comm_bits,cum_flops";

const TAG_DATA: u64 = 11;
const TAG_PARTITION: u64 = 12;
const TAG_SPLIT: u64 = 13;

/// One evaluated round. `round` counts completed rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
    pub overall_density: f64,
    pub per_layer_density: Vec<f64>,
    pub cum_comm_bits: u64,
    pub cum_flops: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn from_metrics(m: &RoundMetrics) -> Self {
        let acc = m.accuracy.as_ref();
        MetricsRow {
            round: m.round + 1,
            mean_acc: acc.and_then(|a| a.mean),
            std_acc: acc.and_then(|a| a.std),
            overall_density: m.density.overall,
            per_layer_density: m.density.per_layer.clone(),
            cum_comm_bits: m.cum_comm_bits,
            cum_flops: m.cum_flops,
        }
    }

    pub fn to_csv(&self) -> String {
        let layers: Vec<String> = self.per_layer_density.iter().map(f64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            opt(self.mean_acc),
            opt(self.std_acc),
            self.overall_density,
            layers.join(";"),
            self.cum_comm_bits,
            self.cum_flops
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: StrategyId,
    pub best_mean_acc: Option<f64>,
    pub best_round: Option<usize>,
    pub density_at_best: Option<f64>,
    pub final_mean_acc: Option<f64>,
    pub final_density: Option<f64>,
    pub total_comm_bits: u64,
    pub total_flops: u64,
    pub seed: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

impl RunOutcome {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv());
        }
        out
    }
}

/// Loads or generates the samples, shaped for the configured model.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = match &cfg.dataset {
        DatasetSpec::Synthetic {
            classes,
            dim,
            per_class,
            spread,
        } => synth_dataset(*classes, *dim, *per_class, *spread, derive_seed(cfg.seed, TAG_DATA))?,
        DatasetSpec::Idx { images, labels } => load_idx(images, labels)?,
    };
    let len: usize = data.sample_shape().iter().product();
    match cfg.model.input_shape() {
        Some(shape) => {
            let want: usize = shape.iter().product();
            if want != len {
                return Err(SpaflError::config(format!(
                    "model expects samples of shape {shape:?}, data has {:?}",
                    data.sample_shape()
                )));
            }
            data.with_sample_shape(&shape)
        }
        None => data.with_sample_shape(&[len]),
    }
}

pub fn build_architecture(model: &ModelSpec, data: &Dataset) -> Result<Architecture> {
    match model {
        ModelSpec::Lenet => Ok(Architecture::lenet5(data.n_classes())),
        ModelSpec::Cnn7 { outputs } => Ok(Architecture::cnn7(outputs.unwrap_or(data.n_classes()))),
        ModelSpec::Mlp { hidden } => Architecture::mlp(data.sample_shape().iter().product(), hidden, data.n_classes()),
    }
}

/// Data, partition and federation for a config; identical across strategies
/// for the same seed.
pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    let data = load_dataset(cfg)?;
    let arch = build_architecture(&cfg.model, &data)?;
    let partition = dirichlet_partition(
        data.labels(),
        data.n_classes(),
        cfg.clients,
        cfg.dirichlet_beta,
        derive_seed(cfg.seed, TAG_PARTITION),
        cfg.min_per_client,
    )?;
    let split = client_split(&partition, data.labels(), cfg.test_fraction, derive_seed(cfg.seed, TAG_SPLIT))?;
    Federation::new(arch, data, &split, cfg.round_config())?.with_workers(cfg.workers)
}

fn dump_masks(fed: &Federation, clients: &[usize], round: usize, dir: &Path) -> Result<()> {
    for &c in clients {
        let (_, mask) = fed.client_model(c)?;
        for (l, layer) in mask.layers.iter().enumerate() {
            dump_sparsity_pattern(layer, c, l, round, dir)?;
        }
    }
    Ok(())
}

/// Runs all rounds in memory; mask images go to `dump_dir` when given.
pub fn simulate(cfg: &ExperimentConfig, dump_dir: Option<&Path>) -> Result<RunOutcome> {
    let mut fed = build_federation(cfg)?;
    let mut rows = Vec::new();
    for t in 0..cfg.rounds {
        let completed = t + 1;
        let evaluate = completed % cfg.eval_every == 0 || completed == cfg.rounds;
        let metrics = fed.run_round(evaluate)?;
        if evaluate {
            let row = MetricsRow::from_metrics(&metrics);
            info!(
                "round {completed}/{}: acc {} density {:.4}",
                cfg.rounds,
                opt(row.mean_acc),
                row.overall_density
            );
            rows.push(row);
        }
        if let Some(dir) = dump_dir {
            if cfg.dump_masks_every > 0 && completed % cfg.dump_masks_every == 0 {
                dump_masks(&fed, &cfg.dump_clients, completed, dir)?;
            }
        }
    }

    let mut best: Option<&MetricsRow> = None;
    for row in &rows {
        if let Some(acc) = row.mean_acc {
            if best.and_then(|b| b.mean_acc).is_none_or(|b| acc > b) {
                best = Some(row);
            }
        }
    }
    let last = rows.last();
    let summary = RunSummary {
        strategy: cfg.strategy,
        best_mean_acc: best.and_then(|b| b.mean_acc),
        best_round: best.map(|b| b.round),
        density_at_best: best.map(|b| b.overall_density),
        final_mean_acc: last.and_then(|r| r.mean_acc),
        final_density: last.map(|r| r.overall_density),
        total_comm_bits: fed.ledger().total_bits(),
        total_flops: fed.ledger().flops,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    Ok(RunOutcome { rows, summary })
}

/// Runs the experiment and writes its artifacts into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    fs::create_dir_all(&cfg.out_dir)?;
    let outcome = simulate(cfg, Some(&cfg.out_dir))?;
    fs::write(cfg.out_dir.join(METRICS_FILE), outcome.metrics_csv())?;
    let mut json = serde_json::to_string_pretty(&outcome.summary)?;
    json.push('\n');
    fs::write(cfg.out_dir.join(SUMMARY_FILE), json)?;
    Ok(outcome)
}
