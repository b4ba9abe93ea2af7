use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClientSplit, Dataset};
use crate::error::{Result, SpaflError};
use crate::nn::{backward_pass, clamp_parameters, forward_pass, sgd_momentum_step, Architecture, GradientSet, NetworkParams};
use crate::pruning::{
    density_metrics, generate_mask, layer_reset, threshold_gradient, threshold_step, BinaryMask, DensityReport,
    ThresholdVector,
};

const EVAL_CHUNK: usize = 256;

/// Everything a client keeps between rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Dense local parameters; never leave the client under threshold-only exchange.
    pub params: NetworkParams,
    pub velocity: GradientSet,
    /// Thresholds after the client's last local training.
    pub thresholds: ThresholdVector,
    /// Last global thresholds received from the server.
    pub last_global: ThresholdVector,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub(crate) rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(id: usize, arch: &Architecture, params: NetworkParams, split: &ClientSplit, seed: u64) -> Result<Self> {
        params.check_layout(arch)?;
        let tau = ThresholdVector::zeros(arch);
        Ok(ClientState {
            id,
            velocity: GradientSet::zeros_like(&params),
            params,
            thresholds: tau.clone(),
            last_global: tau,
            train: split.train.clone(),
            test: split.test.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Test accuracy under the mask that `thresholds` induce on the local
    /// parameters (all rows active when `None`). `None` without test data.
    pub fn evaluate(
        &self,
        arch: &Architecture,
        data: &Dataset,
        thresholds: Option<&ThresholdVector>,
    ) -> Result<Option<f64>> {
        let mask = match thresholds {
            Some(t) => generate_mask(&self.params, t)?,
            None => BinaryMask::all_active(arch),
        };
        evaluate(arch, &self.params, &mask, data, &self.test)
    }
}

/// What one client runs locally in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub train_params: bool,
    pub train_thresholds: bool,
    /// Apply the threshold-induced mask; off for dense baselines.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalReport {
    pub thresholds: ThresholdVector,
    /// Density of the mask used in each epoch.
    pub epoch_densities: Vec<DensityReport>,
    /// Layers zeroed by the density reset, over all epochs.
    pub resets: usize,
    pub samples: usize,
    pub mean_loss: f64,
}

/// `E` epochs of mini-batch training starting from `start` thresholds.
///
/// The mask is regenerated at the start of every epoch; a layer that falls
/// below the reset density gets its thresholds zeroed and the mask is
/// regenerated once more. Within a batch the threshold gradient is taken at
/// the weights that produced it, before the parameter step.
pub fn local_train(
    client: &mut ClientState,
    arch: &Architecture,
    data: &Dataset,
    start: &ThresholdVector,
    cfg: &LocalConfig,
) -> Result<LocalReport> {
    if client.train.is_empty() {
        return Err(SpaflError::EmptyPartition(client.id));
    }
    if cfg.batch_size == 0 {
        return Err(SpaflError::config("batch size must be >= 1"));
    }
    let mut tau = start.clone();
    let mut order = client.train.clone();
    let mut epoch_densities = Vec::with_capacity(cfg.epochs);
    let mut resets = 0;
    let mut loss_sum = 0.0;
    let mut batches = 0usize;

    for _ in 0..cfg.epochs {
        let mask = if cfg.masked {
            let mask = generate_mask(&client.params, &tau)?;
            let reset = layer_reset(&mut tau, &density_metrics(&mask));
            if reset.is_empty() {
                mask
            } else {
                resets += reset.len();
                generate_mask(&client.params, &tau)?
            }
        } else {
            BinaryMask::all_active(arch)
        };
        epoch_densities.push(density_metrics(&mask));

        order.shuffle(&mut client.rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let (loss, grads) = backward_pass(arch, &client.params, &mask, &x, &y)?;
            if cfg.train_thresholds {
                let h = threshold_gradient(&grads, &client.params, &mask);
                threshold_step(&mut tau, &h, cfg.lr, cfg.alpha);
            }
            if cfg.train_params {
                sgd_momentum_step(&mut client.params, &grads, &mut client.velocity, cfg.lr, cfg.momentum)?;
                clamp_parameters(&mut client.params);
            }
            loss_sum += loss;
            batches += 1;
        }
    }

    Ok(LocalReport {
        thresholds: tau,
        epoch_densities,
        resets,
        samples: client.train.len(),
        mean_loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
    })
}

/// Top-1 accuracy of the masked model on `indices`; `None` if there are none.
pub fn evaluate(
    arch: &Architecture,
    params: &NetworkParams,
    mask: &BinaryMask,
    data: &Dataset,
    indices: &[usize],
) -> Result<Option<f64>> {
    if indices.is_empty() {
        return Ok(None);
    }
    let classes = arch.output_len();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let logits = forward_pass(arch, params, mask, &x)?;
        for (row, &label) in logits.data().chunks(classes).zip(&y) {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(Some(correct as f64 / indices.len() as f64))
}
