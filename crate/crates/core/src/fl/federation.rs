use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    aggregate_thresholds, derive_seed, importance_update, local_train, sample_clients, Channel, ClientState,
    Direction, LocalConfig, LocalReport, RoundConfig, ServerState,
};
use crate::accounting::{epoch_flops, CostLedger, RoundCost};
use crate::data::{Dataset, Partition};
use crate::error::{Result, SpaflError};
use crate::nn::{Architecture, NetworkParams};
use crate::pruning::{density_metrics, generate_mask, mean_density, BinaryMask, DensityReport, ThresholdVector};
use crate::strategies::{self, StrategyId};

const TAG_INIT: u64 = 1;
const TAG_SAMPLING: u64 = 2;
const TAG_CLIENT: u64 = 0x1000;

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// `None` for clients without test data.
    pub per_client: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Population standard deviation over clients with test data.
    pub std: Option<f64>,
}

impl AccuracyReport {
    fn from_per_client(per_client: Vec<Option<f64>>) -> Self {
        let vals: Vec<f64> = per_client.iter().flatten().copied().collect();
        if vals.is_empty() {
            return AccuracyReport {
                per_client,
                mean: None,
                std: None,
            };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        AccuracyReport {
            per_client,
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// Zero-based index of the completed round.
    pub round: usize,
    pub sampled: Vec<usize>,
    /// Sampled clients that had nothing to train on.
    pub skipped: Vec<usize>,
    pub accuracy: Option<AccuracyReport>,
    /// Mean over all clients of the density of their evaluation masks.
    pub density: DensityReport,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub flops: u64,
    pub cum_comm_bits: u64,
    pub cum_flops: u64,
}

/// Server, clients, data and the channel between them.
#[derive(Debug)]
pub struct Federation {
    pub(crate) arch: Architecture,
    pub(crate) data: Dataset,
    pub(crate) clients: Vec<ClientState>,
    pub(crate) server: ServerState,
    /// Shared initialization; the FedAvg global model afterwards.
    pub(crate) global_params: NetworkParams,
    pub(crate) config: RoundConfig,
    pub(crate) channel: Channel,
    pub(crate) ledger: CostLedger,
    pool: Option<rayon::ThreadPool>,
}

impl Federation {
    /// Builds every client from one shared initialization `w(0)` and
    /// `tau(0) = 0`. The initial broadcast is part of setup and not charged.
    pub fn new(arch: Architecture, data: Dataset, partition: &Partition, config: RoundConfig) -> Result<Self> {
        config.validate()?;
        if partition.clients.len() != config.n_clients {
            return Err(SpaflError::config(format!(
                "partition has {} clients, config expects N = {}",
                partition.clients.len(),
                config.n_clients
            )));
        }
        let sample_len: usize = data.sample_shape().iter().product();
        if sample_len != arch.input_len() {
            return Err(SpaflError::config(format!(
                "samples have {sample_len} values, model expects {}",
                arch.input_len()
            )));
        }
        if data.n_classes() > arch.output_len() {
            return Err(SpaflError::config(format!(
                "{} classes but the model has {} outputs",
                data.n_classes(),
                arch.output_len()
            )));
        }
        if let Some(bad) = partition.clients.iter().flat_map(|c| c.train.iter().chain(&c.test)).find(|&&i| i >= data.len()) {
            return Err(SpaflError::data(format!("partition index {bad} out of range for {} samples", data.len())));
        }

        let w0 = NetworkParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_INIT)));
        let clients = partition
            .clients
            .iter()
            .enumerate()
            .map(|(id, split)| {
                ClientState::new(id, &arch, w0.clone(), split, derive_seed(config.seed, TAG_CLIENT + id as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let server = ServerState::new(ThresholdVector::zeros(&arch), derive_seed(config.seed, TAG_SAMPLING));
        Ok(Federation {
            arch,
            data,
            clients,
            server,
            global_params: w0,
            config,
            channel: Channel::new(),
            ledger: CostLedger::new(),
            pool: None,
        })
    }

    /// Trains sampled clients on `workers` threads. Results do not depend on it.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| SpaflError::config(format!("cannot start {workers} workers: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn global_params(&self) -> &NetworkParams {
        &self.global_params
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    /// One round of the configured strategy.
    pub fn run_round(&mut self, evaluate: bool) -> Result<RoundMetrics> {
        strategies::run_round(self, evaluate)
    }

    /// Parameters and mask each client is evaluated with.
    pub fn client_model(&self, id: usize) -> Result<(&NetworkParams, BinaryMask)> {
        let c = &self.clients[id];
        Ok(match self.config.strategy {
            StrategyId::FedAvg => (&self.global_params, BinaryMask::all_active(&self.arch)),
            StrategyId::LocalOnly => (&c.params, generate_mask(&c.params, &c.thresholds)?),
            _ => (&c.params, generate_mask(&c.params, self.server.global())?),
        })
    }

    pub fn evaluate_all(&self) -> Result<AccuracyReport> {
        let eval = |c: &ClientState| -> Result<Option<f64>> {
            let (params, mask) = self.client_model(c.id)?;
            super::evaluate(&self.arch, params, &mask, &self.data, &c.test)
        };
        let per_client = match &self.pool {
            Some(pool) => pool.install(|| self.clients.par_iter().map(eval).collect::<Result<Vec<_>>>())?,
            None => self.clients.iter().map(eval).collect::<Result<Vec<_>>>()?,
        };
        Ok(AccuracyReport::from_per_client(per_client))
    }

    pub fn density(&self) -> Result<DensityReport> {
        let reports = (0..self.clients.len())
            .map(|id| self.client_model(id).map(|(_, m)| density_metrics(&m)))
            .collect::<Result<Vec<_>>>()?;
        mean_density(&reports).ok_or_else(|| SpaflError::config("federation has no clients"))
    }

    pub(crate) fn local_config(&self, round: usize, train_params: bool, train_thresholds: bool, masked: bool) -> LocalConfig {
        LocalConfig {
            epochs: self.config.local_epochs,
            lr: self.config.lr_at(round),
            alpha: self.config.alpha,
            momentum: self.config.momentum,
            batch_size: self.config.batch_size,
            train_params,
            train_thresholds,
            masked,
        }
    }

    /// Runs `f` on each sampled client (ascending ids), possibly in
    /// parallel. Clients with empty partitions are split off as skipped.
    pub(crate) fn for_sampled<T, F>(&mut self, ids: &[usize], f: F) -> Result<(Vec<(usize, T)>, Vec<usize>)>
    where
        T: Send,
        F: Fn(usize, &mut ClientState, &Architecture, &Dataset) -> Result<T> + Sync,
    {
        let arch = &self.arch;
        let data = &self.data;
        let mut targets: Vec<(usize, &mut ClientState)> = self
            .clients
            .iter_mut()
            .filter_map(|c| ids.binary_search(&c.id).ok().map(|slot| (slot, c)))
            .collect();
        let run = |(slot, c): &mut (usize, &mut ClientState)| (c.id, f(*slot, c, arch, data));
        let results: Vec<(usize, Result<T>)> = match &self.pool {
            Some(pool) => pool.install(|| targets.par_iter_mut().map(run).collect()),
            None => targets.iter_mut().map(run).collect(),
        };
        let mut done = Vec::with_capacity(results.len());
        let mut skipped = Vec::new();
        for (id, r) in results {
            match r {
                Ok(v) => done.push((id, v)),
                Err(SpaflError::EmptyPartition(_)) => {
                    warn!("client {id} skipped: empty training partition");
                    skipped.push(id);
                }
                Err(e) => return Err(e),
            }
        }
        Ok((done, skipped))
    }

    pub(crate) fn training_flops(&self, reports: &[&LocalReport], with_importance: bool) -> u64 {
        reports
            .iter()
            .map(|r| {
                r.epoch_densities
                    .iter()
                    .enumerate()
                    .map(|(e, d)| epoch_flops(&self.arch, &d.per_layer, r.samples, with_importance && e == 0))
                    .sum::<u64>()
            })
            .sum()
    }

    /// Books the round's costs and assembles its metrics.
    pub(crate) fn finish_round(
        &mut self,
        round: usize,
        sampled: Vec<usize>,
        skipped: Vec<usize>,
        flops: u64,
        evaluate: bool,
    ) -> Result<RoundMetrics> {
        let uplink_bits = self.channel.round_bits(round, Direction::Uplink);
        let downlink_bits = self.channel.round_bits(round, Direction::Downlink);
        self.ledger.record(RoundCost {
            round,
            uplink_bits,
            downlink_bits,
            flops,
        });
        let accuracy = if evaluate { Some(self.evaluate_all()?) } else { None };
        Ok(RoundMetrics {
            round,
            sampled,
            skipped,
            accuracy,
            density: self.density()?,
            uplink_bits,
            downlink_bits,
            flops,
            cum_comm_bits: self.ledger.total_bits(),
            cum_flops: self.ledger.flops,
        })
    }
}

/// Threshold-exchange round shared by SpaFL, its ablation and the
/// frozen-parameter variant.
///
/// Only `tau(t)` goes down. Each client derives the importance signal from
/// the last global thresholds it saw, so it needs no extra downlink.
pub(crate) fn federation_round(
    fed: &mut Federation,
    importance: bool,
    train_params: bool,
    evaluate: bool,
) -> Result<RoundMetrics> {
    let t = fed.server.round();
    let sampled = sample_clients(fed.config.n_clients, fed.config.clients_per_round, &mut fed.server.rng)?;
    let received: Vec<ThresholdVector> = sampled
        .iter()
        .map(|&id| fed.channel.send_thresholds(t, id, Direction::Downlink, fed.server.global().clone()))
        .collect();
    let cfg = fed.local_config(t, train_params, true, true);

    let (reports, skipped) = fed.for_sampled(&sampled, |slot, c, arch, data| {
        if c.train.is_empty() {
            return Err(SpaflError::EmptyPartition(c.id));
        }
        let tau = &received[slot];
        let delta = tau.delta_from(&c.last_global);
        c.last_global = tau.clone();
        if importance {
            importance_update(&mut c.params, &delta)?;
        }
        let report = local_train(c, arch, data, tau, &cfg)?;
        c.thresholds = report.thresholds.clone();
        Ok(report)
    })?;

    let returned: Vec<ThresholdVector> = reports
        .iter()
        .map(|(id, r)| fed.channel.send_thresholds(t, *id, Direction::Uplink, r.thresholds.clone()))
        .collect();
    let flops = fed.training_flops(&reports.iter().map(|(_, r)| r).collect::<Vec<_>>(), importance);
    if returned.is_empty() {
        warn!("round {t}: no client returned thresholds; global thresholds kept");
        fed.server.skip_round();
    } else {
        fed.server.advance(aggregate_thresholds(&returned)?);
    }
    fed.finish_round(t, sampled, skipped, flops, evaluate)
}
