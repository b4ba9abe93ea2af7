//! Round orchestration: client sampling, local training of parameters and
//! thresholds, threshold-only aggregation and the importance update that
//! clients derive from consecutive global thresholds.

mod channel;
mod client;
mod federation;
mod server;

pub use channel::{Channel, Direction, PayloadKind, Transfer};
pub use client::{evaluate, local_train, ClientState, LocalConfig, LocalReport};
pub use federation::{AccuracyReport, Federation, RoundMetrics};
pub(crate) use federation::federation_round;
pub use server::ServerState;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpaflError};
use crate::nn::{NetworkParams, PARAM_BOUND};
use crate::pruning::{LayerVectors, ThresholdVector};
use crate::strategies::StrategyId;

/// Hyperparameters of a federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    /// Per-round multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub alpha: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub strategy: StrategyId,
    pub seed: u64,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(SpaflError::config("N must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return Err(SpaflError::config(format!(
                "K ≤ N required (K = {}, N = {}), and K >= 1",
                self.clients_per_round, self.n_clients
            )));
        }
        if self.local_epochs == 0 {
            return Err(SpaflError::config("E must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SpaflError::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(SpaflError::config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SpaflError::config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SpaflError::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(SpaflError::config("batch size must be >= 1"));
        }
        Ok(())
    }

    /// `lr * lr_decay^round`.
    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr * self.lr_decay.powi(round as i32)
    }
}

/// Mixes a master seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `k` distinct client ids drawn uniformly without replacement, ascending.
pub fn sample_clients<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(SpaflError::config(format!("cannot sample K = {k} of N = {n} clients")));
    }
    let mut ids = rand::seq::index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Equal-weight mean of the clients' thresholds, accumulated in the given order.
pub fn aggregate_thresholds(returned: &[ThresholdVector]) -> Result<ThresholdVector> {
    let first = returned
        .first()
        .ok_or_else(|| SpaflError::Protocol("no thresholds to aggregate".into()))?;
    if returned.iter().any(|t| !t.same_layout(first)) {
        return Err(SpaflError::Protocol("threshold vectors have different layouts".into()));
    }
    let layers = first
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            (0..layer.len())
                .map(|i| {
                    // running mean: exact when all clients agree
                    let mut m = 0.0;
                    for (k, t) in returned.iter().enumerate() {
                        m += (t.layer(l)[i] - m) / (k + 1) as f64;
                    }
                    m.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    ThresholdVector::from_layers(layers)
}

/// `tau(t+1) - tau(t)` as held by the server; zero before the first aggregation.
pub fn compute_delta_tau(server: &ServerState) -> LayerVectors {
    server.global().delta_from(server.previous())
}

fn sign_or_positive(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Shifts every weight of row `i` by `-(delta_i / n_in) * sign(sum_j w_ij)`,
/// with `sign(0) = +1`, then clamps to `[-1, 1]`. Biases are untouched.
///
/// A falling threshold marks the row as globally important: its weights move
/// further in their dominant direction, growing the row's magnitude. A rising
/// threshold shrinks it.
pub fn importance_update(params: &mut NetworkParams, delta: &[Vec<f64>]) -> Result<()> {
    if delta.len() != params.layers.len()
        || params.layers.iter().zip(delta).any(|(p, d)| p.n_out() != d.len())
    {
        return Err(SpaflError::config("threshold delta does not match the parameter layout"));
    }
    for (layer, dl) in params.layers.iter_mut().zip(delta) {
        let n_in = layer.n_in() as f64;
        for (i, &dt) in dl.iter().enumerate() {
            if dt == 0.0 {
                continue;
            }
            let row = layer.weight.row_mut(i);
            let direction = sign_or_positive(row.iter().sum());
            let shift = (dt / n_in) * direction;
            for w in row.iter_mut() {
                *w = (*w - shift).clamp(-PARAM_BOUND, PARAM_BOUND);
            }
        }
    }
    Ok(())
}
