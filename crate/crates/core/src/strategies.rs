//! Baselines and ablations on top of the round engine.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpaflError};
use crate::fl::{local_train, sample_clients, Direction, Federation, RoundMetrics};
use crate::pruning::ThresholdVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Spafl,
    SpaflNoImportance,
    #[serde(rename = "fedavg")]
    FedAvg,
    LocalOnly,
    ThresholdsOnly,
}

/// Named baselines that are recognized but not implemented.
pub const UNSUPPORTED_STRATEGIES: [&str; 5] = ["fedpm", "heterofl", "fjord", "fedp3", "fedspa"];

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::Spafl,
        StrategyId::SpaflNoImportance,
        StrategyId::FedAvg,
        StrategyId::LocalOnly,
        StrategyId::ThresholdsOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Spafl => "spafl",
            StrategyId::SpaflNoImportance => "spafl_no_importance",
            StrategyId::FedAvg => "fedavg",
            StrategyId::LocalOnly => "local_only",
            StrategyId::ThresholdsOnly => "thresholds_only",
        }
    }

    fn valid_names() -> String {
        Self::ALL.map(StrategyId::name).join(", ")
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = SpaflError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        if let Some(id) = Self::ALL.into_iter().find(|id| id.name() == key) {
            return Ok(id);
        }
        if UNSUPPORTED_STRATEGIES.contains(&key.as_str()) {
            return Err(SpaflError::config(format!(
                "strategy '{s}' is unsupported; valid strategies: {}",
                Self::valid_names()
            )));
        }
        Err(SpaflError::config(format!(
            "unknown strategy '{s}'; valid strategies: {}",
            Self::valid_names()
        )))
    }
}

/// Dispatches one round of the federation's configured strategy.
pub fn run_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    match fed.config().strategy {
        StrategyId::Spafl => run_spafl_round(fed, evaluate),
        StrategyId::SpaflNoImportance => run_spafl_no_importance_round(fed, evaluate),
        StrategyId::FedAvg => run_fedavg_round(fed, evaluate),
        StrategyId::LocalOnly => run_local_round(fed, evaluate),
        StrategyId::ThresholdsOnly => run_thresholds_only_round(fed, evaluate),
    }
}

pub fn run_spafl_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    crate::fl::federation_round(fed, true, true, evaluate)
}

/// SpaFL without the importance update.
pub fn run_spafl_no_importance_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    crate::fl::federation_round(fed, false, true, evaluate)
}

/// Trains and exchanges thresholds only; weights stay at initialization.
pub fn run_thresholds_only_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    crate::fl::federation_round(fed, false, false, evaluate)
}

/// Dense global model: clients train unmasked and return all parameters,
/// which the server averages with equal weights.
pub fn run_fedavg_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    let t = fed.server.round();
    let sampled = sample_clients(fed.config.n_clients, fed.config.clients_per_round, &mut fed.server.rng)?;
    let global = fed.global_params.flatten();
    let received: Vec<Vec<f64>> = sampled
        .iter()
        .map(|&id| fed.channel.send_params(t, id, Direction::Downlink, global.clone()))
        .collect();
    let cfg = fed.local_config(t, true, false, false);
    let unused = ThresholdVector::zeros(&fed.arch);

    let (results, skipped) = fed.for_sampled(&sampled, |slot, c, arch, data| {
        if c.train.is_empty() {
            return Err(SpaflError::EmptyPartition(c.id));
        }
        c.params.load_flat(&received[slot])?;
        let report = local_train(c, arch, data, &unused, &cfg)?;
        Ok((report, c.params.flatten()))
    })?;

    let mut sum = vec![0.0; global.len()];
    let mut returned = 0usize;
    for (id, (_, flat)) in &results {
        let got = fed.channel.send_params(t, *id, Direction::Uplink, flat.clone());
        for (s, v) in sum.iter_mut().zip(&got) {
            *s += v;
        }
        returned += 1;
    }
    let flops = fed.training_flops(&results.iter().map(|(_, (r, _))| r).collect::<Vec<_>>(), false);
    if returned == 0 {
        warn!("round {t}: no client returned parameters; global model kept");
    } else {
        let k = returned as f64;
        let mean: Vec<f64> = sum.into_iter().map(|s| (s / k).clamp(-1.0, 1.0)).collect();
        fed.global_params.load_flat(&mean)?;
    }
    fed.server.skip_round();
    fed.finish_round(t, sampled, skipped, flops, evaluate)
}

/// Pruned local training on each sampled client's private thresholds with
/// no communication at all.
pub fn run_local_round(fed: &mut Federation, evaluate: bool) -> Result<RoundMetrics> {
    let t = fed.server.round();
    let sampled = sample_clients(fed.config.n_clients, fed.config.clients_per_round, &mut fed.server.rng)?;
    let cfg = fed.local_config(t, true, true, true);
    let (results, skipped) = fed.for_sampled(&sampled, |_, c, arch, data| {
        let start = c.thresholds.clone();
        let report = local_train(c, arch, data, &start, &cfg)?;
        c.thresholds = report.thresholds.clone();
        Ok(report)
    })?;
    let flops = fed.training_flops(&results.iter().map(|(_, r)| r).collect::<Vec<_>>(), false);
    fed.server.skip_round();
    fed.finish_round(t, sampled, skipped, flops, evaluate)
}
