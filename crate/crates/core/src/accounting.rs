//! Communication and FLOPs bookkeeping.
//!
//! Every scalar on the wire is charged 32 bits regardless of the in-memory
//! precision. FLOPs count only convolution and dense layers: a forward pass
//! costs `rho * N * n_in * n_out * H_out * W_out`, backward twice that, and the
//! importance update `1.5 * d` once per participating client and round.

use serde::Serialize;

use crate::nn::{Architecture, LayerKind, LayerSpec};

pub const BITS_PER_SCALAR: u64 = 32;

/// Bits sent by `k` clients (or to them) for one exchange of `scalars` values each.
pub fn exchange_bits(k: u64, scalars: u64) -> u64 {
    k * scalars * BITS_PER_SCALAR
}

/// Total threshold traffic over `rounds`: uplink plus downlink.
pub fn spafl_comm_bits(k: u64, tau_num: u64, rounds: u64) -> u64 {
    rounds * 2 * exchange_bits(k, tau_num)
}

/// Total traffic when full models of `d` scalars are exchanged.
pub fn dense_comm_bits(k: u64, d: u64, rounds: u64) -> u64 {
    rounds * 2 * exchange_bits(k, d)
}

pub fn gbit(bits: u64) -> f64 {
    bits as f64 / 1e9
}

/// `sum_l n_out^l` over prunable layers.
pub fn threshold_count(layers: &[LayerSpec]) -> usize {
    layers.iter().filter(|l| l.kind.is_prunable()).map(|l| l.n_out).sum()
}

/// Forward FLOPs of one prunable layer at row density `density` for `batch`
/// samples. `out_hw` is the output spatial size (`(1, 1)` for dense layers).
pub fn layer_flops_forward(layer: &LayerSpec, out_hw: (usize, usize), density: f64, batch: usize) -> u64 {
    let positions = match layer.kind {
        LayerKind::Conv2d => out_hw.0 * out_hw.1,
        LayerKind::Dense => 1,
        LayerKind::MaxPool2d | LayerKind::Relu => return 0,
    };
    let dense = batch as f64 * layer.n_in as f64 * layer.n_out as f64 * positions as f64;
    (density * dense).round() as u64
}

/// `1.5 * d` for the once-per-round importance update.
pub fn importance_update_flops(d: usize) -> u64 {
    (1.5 * d as f64).round() as u64
}

/// Training FLOPs of one local epoch over `samples` samples: three times the
/// forward cost of every prunable layer at its density, plus the importance
/// update charge when `with_importance_update` is set.
pub fn epoch_flops(arch: &Architecture, densities: &[f64], samples: usize, with_importance_update: bool) -> u64 {
    let specs = arch.prunable_specs();
    let hw = arch.prunable_output_hw();
    let passes: u64 = specs
        .iter()
        .zip(&hw)
        .zip(densities)
        .map(|((spec, &out_hw), &rho)| 3 * layer_flops_forward(spec, out_hw, rho, samples))
        .sum();
    let update = if with_importance_update {
        importance_update_flops(arch.weight_count())
    } else {
        0
    };
    passes + update
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundCost {
    pub round: usize,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub flops: u64,
}

/// Cumulative communication and compute. Counters only grow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CostLedger {
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub flops: u64,
    pub rounds: Vec<RoundCost>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, cost: RoundCost) {
        self.uplink_bits += cost.uplink_bits;
        self.downlink_bits += cost.downlink_bits;
        self.flops += cost.flops;
        self.rounds.push(cost);
    }

    pub fn total_bits(&self) -> u64 {
        self.uplink_bits + self.downlink_bits
    }
}
