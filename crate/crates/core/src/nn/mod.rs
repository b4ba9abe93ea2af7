//! Minimal neural-network engine: dense, 2-D convolution, max-pool and ReLU
//! layers with hand-written forward and backward passes.
//!
//! Convolutions are lowered to an `(n_out, n_in)` weight matrix applied to
//! extracted input patches, with `n_in = c_in * k_h * k_w`, so every
//! prunable layer exposes the same row-per-output-unit layout.

mod forward;
mod gradcheck;
mod optim;
mod params;

pub use forward::{backward_pass, cross_entropy_with_grad, forward_pass, loss_cross_entropy};
pub use gradcheck::{central_difference, finite_diff_oracle, ParamIndex, ParamSlot};
pub use optim::{clamp_parameters, sgd_momentum_step, PARAM_BOUND};
pub use params::{GradientSet, LayerParams, NetworkParams};

use crate::error::{Result, SpaflError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    MaxPool2d,
    Relu,
}

impl LayerKind {
    pub fn is_prunable(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv2d)
    }
}

/// One layer of a sequential network.
///
/// For prunable layers `n_out` is the number of neurons or filters and
/// `n_in` the flattened fan-in of a single output unit. Parameter-free
/// layers carry zero for both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub n_out: usize,
    pub n_in: usize,
    /// `(height, width)` of the convolution or pooling window.
    pub kernel: (usize, usize),
    pub stride: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(n_in: usize, n_out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            n_out,
            n_in,
            kernel: (1, 1),
            stride: 1,
            has_bias: true,
        }
    }

    pub fn conv2d(in_channels: usize, filters: usize, kernel: (usize, usize), stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            n_out: filters,
            n_in: in_channels * kernel.0 * kernel.1,
            kernel,
            stride,
            has_bias: true,
        }
    }

    pub fn max_pool(kernel: (usize, usize), stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool2d,
            n_out: 0,
            n_in: 0,
            kernel,
            stride,
            has_bias: false,
        }
    }

    pub fn relu() -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            n_out: 0,
            n_in: 0,
            kernel: (1, 1),
            stride: 1,
            has_bias: false,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => self.n_in / (self.kernel.0 * self.kernel.1),
            _ => 0,
        }
    }

    /// Number of weights (excluding bias).
    pub fn weight_count(&self) -> usize {
        if self.kind.is_prunable() {
            self.n_out * self.n_in
        } else {
            0
        }
    }
}

/// Activation shape of a single sample between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Flat(usize),
    Image { c: usize, h: usize, w: usize },
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Image { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated sequential architecture with per-layer activation shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input: ActShape,
    layers: Vec<LayerSpec>,
    shapes: Vec<(ActShape, ActShape)>,
}

impl Architecture {
    /// `input` is the per-sample shape: `[features]` or `[channels, height, width]`.
    pub fn new(input: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let input = match *input {
            [n] if n > 0 => ActShape::Flat(n),
            [c, h, w] if c * h * w > 0 => ActShape::Image { c, h, w },
            _ => {
                return Err(SpaflError::config(format!(
                    "input shape must be [features] or [channels, height, width], got {input:?}"
                )))
            }
        };
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for (i, spec) in layers.iter().enumerate() {
            if spec.stride == 0 {
                return Err(SpaflError::config(format!("layer {i}: stride must be >= 1")));
            }
            let next = match spec.kind {
                LayerKind::Dense => {
                    if spec.n_out == 0 || spec.n_in == 0 {
                        return Err(SpaflError::config(format!("layer {i}: dense layer needs n_in, n_out >= 1")));
                    }
                    if cur.len() != spec.n_in {
                        return Err(SpaflError::config(format!(
                            "layer {i}: dense layer expects {} inputs but receives {}",
                            spec.n_in,
                            cur.len()
                        )));
                    }
                    ActShape::Flat(spec.n_out)
                }
                LayerKind::Conv2d => {
                    let ActShape::Image { c, h, w } = cur else {
                        return Err(SpaflError::config(format!("layer {i}: conv2d needs an image-shaped input")));
                    };
                    let (kh, kw) = spec.kernel;
                    if spec.n_out == 0 || kh == 0 || kw == 0 || spec.n_in != c * kh * kw {
                        return Err(SpaflError::config(format!(
                            "layer {i}: conv2d fan-in {} must equal c_in*k_h*k_w = {}",
                            spec.n_in,
                            c * kh * kw
                        )));
                    }
                    if kh > h || kw > w {
                        return Err(SpaflError::config(format!("layer {i}: kernel larger than input {h}x{w}")));
                    }
                    ActShape::Image {
                        c: spec.n_out,
                        h: (h - kh) / spec.stride + 1,
                        w: (w - kw) / spec.stride + 1,
                    }
                }
                LayerKind::MaxPool2d => {
                    let ActShape::Image { c, h, w } = cur else {
                        return Err(SpaflError::config(format!("layer {i}: max-pool needs an image-shaped input")));
                    };
                    let (kh, kw) = spec.kernel;
                    if kh == 0 || kw == 0 || kh > h || kw > w {
                        return Err(SpaflError::config(format!("layer {i}: invalid pooling window")));
                    }
                    ActShape::Image {
                        c,
                        h: (h - kh) / spec.stride + 1,
                        w: (w - kw) / spec.stride + 1,
                    }
                }
                LayerKind::Relu => cur,
            };
            shapes.push((cur, next));
            cur = next;
        }
        if !matches!(cur, ActShape::Flat(n) if n >= 2) {
            return Err(SpaflError::config("network must end in a flat output of at least 2 classes"));
        }
        if !layers.iter().any(|l| l.kind.is_prunable()) {
            return Err(SpaflError::config("network has no prunable layer"));
        }
        Ok(Architecture { input, layers, shapes })
    }

    /// Lenet-5-Caffe for 28x28 grayscale input.
    pub fn lenet5(n_classes: usize) -> Self {
        Architecture::new(
            &[1, 28, 28],
            vec![
                LayerSpec::conv2d(1, 20, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::max_pool((2, 2), 2),
                LayerSpec::conv2d(20, 50, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::max_pool((2, 2), 2),
                LayerSpec::dense(800, 500),
                LayerSpec::relu(),
                LayerSpec::dense(500, n_classes),
            ],
        )
        .expect("lenet preset is valid")
    }

    /// Seven-layer CNN for 32x32 RGB input (four conv, three dense).
    pub fn cnn7(n_outputs: usize) -> Self {
        Architecture::new(
            &[3, 32, 32],
            vec![
                LayerSpec::conv2d(3, 64, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::conv2d(64, 64, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::max_pool((2, 2), 2),
                LayerSpec::conv2d(64, 128, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::conv2d(128, 128, (5, 5), 1),
                LayerSpec::relu(),
                LayerSpec::max_pool((2, 2), 2),
                LayerSpec::dense(512, 128),
                LayerSpec::relu(),
                LayerSpec::dense(128, 128),
                LayerSpec::relu(),
                LayerSpec::dense(128, n_outputs),
            ],
        )
        .expect("cnn7 preset is valid")
    }

    /// Fully connected ReLU network.
    pub fn mlp(input_dim: usize, hidden: &[usize], n_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::dense(prev, h));
            layers.push(LayerSpec::relu());
            prev = h;
        }
        layers.push(LayerSpec::dense(prev, n_classes));
        Architecture::new(&[input_dim], layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> ActShape {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    /// `(input, output)` activation shapes of layer `i`.
    pub fn layer_shapes(&self, i: usize) -> (ActShape, ActShape) {
        self.shapes[i]
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map(|s| s.1.len()).unwrap_or(0)
    }

    /// Indices (into `layers()`) of dense and conv layers, in order.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_prunable())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn prunable_specs(&self) -> Vec<&LayerSpec> {
        self.layers.iter().filter(|l| l.kind.is_prunable()).collect()
    }

    /// Output spatial size `(h, w)` of every prunable layer; `(1, 1)` for dense.
    pub fn prunable_output_hw(&self) -> Vec<(usize, usize)> {
        self.prunable_indices()
            .into_iter()
            .map(|i| match self.shapes[i].1 {
                ActShape::Image { h, w, .. } => (h, w),
                ActShape::Flat(_) => (1, 1),
            })
            .collect()
    }

    /// Total weight count `d` over prunable layers (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    /// Weights plus biases: every scalar a dense-model exchange carries.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind.is_prunable())
            .map(|l| l.n_out * l.n_in + if l.has_bias { l.n_out } else { 0 })
            .sum()
    }

    /// Number of trainable thresholds: one per neuron or filter.
    pub fn threshold_count(&self) -> usize {
        self.prunable_specs().iter().map(|l| l.n_out).sum()
    }
}
