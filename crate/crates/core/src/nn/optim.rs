use super::{GradientSet, NetworkParams};
use crate::error::{Result, SpaflError};

/// Parameters are confined to `[-PARAM_BOUND, PARAM_BOUND]`.
pub const PARAM_BOUND: f64 = 1.0;

/// SGD with heavy-ball momentum: `v <- momentum*v + g; w <- w - lr*v`.
///
/// Rejects the whole step (leaving `params` and `velocity` untouched) if any
/// gradient entry is non-finite. Clamping is left to the caller.
pub fn sgd_momentum_step(
    params: &mut NetworkParams,
    grads: &GradientSet,
    velocity: &mut GradientSet,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(SpaflError::Numeric("non-finite gradient entry; step rejected".into()));
    }
    let congruent = params.layers.len() == grads.layers.len()
        && grads.layers.len() == velocity.layers.len()
        && params
            .layers
            .iter()
            .zip(&grads.layers)
            .zip(&velocity.layers)
            .all(|((p, g), v)| {
                p.weight.shape() == g.weight.shape()
                    && g.weight.shape() == v.weight.shape()
                    && p.bias.as_ref().map(|t| t.len()) == g.bias.as_ref().map(|t| t.len())
                    && g.bias.as_ref().map(|t| t.len()) == v.bias.as_ref().map(|t| t.len())
            });
    if !congruent {
        return Err(SpaflError::config("parameters, gradients and velocity are not shape-congruent"));
    }
    for ((w, g), v) in params.tensors_mut().zip(grads.tensors()).zip(velocity.tensors_mut()) {
        for ((wi, gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}

/// Saturates every weight and bias to `[-1, 1]`.
pub fn clamp_parameters(params: &mut NetworkParams) {
    for t in params.tensors_mut() {
        t.map_inplace(|w| w.clamp(-PARAM_BOUND, PARAM_BOUND));
    }
}
