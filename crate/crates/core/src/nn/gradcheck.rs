//! Central finite differences, used as an independent gradient oracle.

use super::{forward_pass, loss_cross_entropy, Architecture, NetworkParams};
use crate::error::{Result, SpaflError};
use crate::pruning::BinaryMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight,
    Bias,
}

/// Addresses one scalar: prunable layer, weight or bias, flat offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIndex {
    pub layer: usize,
    pub slot: ParamSlot,
    pub offset: usize,
}

/// `(f(x + step) - f(x - step)) / (2 * step)`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Finite-difference estimate of `dLoss/dparam` with the mask held fixed.
pub fn finite_diff_oracle(
    arch: &Architecture,
    params: &NetworkParams,
    mask: &BinaryMask,
    batch: &Tensor,
    labels: &[usize],
    index: ParamIndex,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(SpaflError::config("finite-difference step must be positive"));
    }
    let layer = params
        .layers
        .get(index.layer)
        .ok_or_else(|| SpaflError::config(format!("no prunable layer {}", index.layer)))?;
    let len = match index.slot {
        ParamSlot::Weight => layer.weight.len(),
        ParamSlot::Bias => layer.bias.as_ref().map_or(0, Tensor::len),
    };
    if index.offset >= len {
        return Err(SpaflError::config(format!("parameter offset {} out of range", index.offset)));
    }
    let mut probe = params.clone();
    let mut failure = None;
    let estimate = central_difference(
        |v| {
            let lp = &mut probe.layers[index.layer];
            let t = match index.slot {
                ParamSlot::Weight => &mut lp.weight,
                ParamSlot::Bias => lp.bias.as_mut().expect("bias presence checked"),
            };
            t.data_mut()[index.offset] = v;
            match forward_pass(arch, &probe, mask, batch).and_then(|z| loss_cross_entropy(&z, labels)) {
                Ok(l) => l,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        {
            let lp = &params.layers[index.layer];
            match index.slot {
                ParamSlot::Weight => lp.weight.data()[index.offset],
                ParamSlot::Bias => lp.bias.as_ref().expect("bias presence checked").data()[index.offset],
            }
        },
        step,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(estimate),
    }
}
