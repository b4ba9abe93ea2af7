use super::{ActShape, Architecture, GradientSet, LayerKind, LayerSpec, NetworkParams};
use crate::error::{Result, SpaflError};
use crate::pruning::{BinaryMask, LayerMask};
use crate::tensor::Tensor;

enum Cache {
    Dense { input: Vec<f64> },
    /// im2col patches for the whole batch: `batch x n_in x positions`.
    Conv { cols: Vec<f64> },
    /// For every pooled output, the flat input index it was taken from.
    Pool { argmax: Vec<usize> },
    Relu { input: Vec<f64> },
}

fn check_inputs(arch: &Architecture, params: &NetworkParams, mask: &BinaryMask, batch: &Tensor) -> Result<usize> {
    params.check_layout(arch)?;
    mask.check_layout(arch)?;
    if batch.shape().len() < 2 || batch.rows() == 0 {
        return Err(SpaflError::config(format!(
            "batch must have a leading batch dimension, got shape {:?}",
            batch.shape()
        )));
    }
    if batch.row_len() != arch.input_len() {
        return Err(SpaflError::config(format!(
            "batch samples have {} values but the first layer expects {}",
            batch.row_len(),
            arch.input_len()
        )));
    }
    Ok(batch.rows())
}

fn image_dims(shape: ActShape) -> (usize, usize, usize) {
    match shape {
        ActShape::Image { c, h, w } => (c, h, w),
        ActShape::Flat(n) => (n, 1, 1),
    }
}

fn dense_forward(x: &[f64], batch: usize, spec: &LayerSpec, w: &[f64], bias: Option<&[f64]>, m: &LayerMask) -> Vec<f64> {
    let (n_in, n_out) = (spec.n_in, spec.n_out);
    let mut y = vec![0.0; batch * n_out];
    for s in 0..batch {
        let xs = &x[s * n_in..(s + 1) * n_in];
        for o in (0..n_out).filter(|&o| m.is_active(o)) {
            let wr = &w[o * n_in..(o + 1) * n_in];
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for (wi, xi) in wr.iter().zip(xs) {
                acc += wi * xi;
            }
            y[s * n_out + o] = acc;
        }
    }
    y
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(spec: &LayerSpec, input: ActShape, output: ActShape) -> Self {
        let (c, h, w) = image_dims(input);
        let (_, ho, wo) = image_dims(output);
        ConvGeom {
            c,
            h,
            w,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            ho,
            wo,
        }
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col(&self, xs: &[f64], cols: &mut [f64]) {
        let p_len = self.positions();
        for ci in 0..self.c {
            for r in 0..self.kh {
                for q in 0..self.kw {
                    let j = (ci * self.kh + r) * self.kw + q;
                    let dst = &mut cols[j * p_len..(j + 1) * p_len];
                    for oy in 0..self.ho {
                        let iy = oy * self.stride + r;
                        let src = &xs[(ci * self.h + iy) * self.w..];
                        for ox in 0..self.wo {
                            dst[oy * self.wo + ox] = src[ox * self.stride + q];
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, dcols: &[f64], dx: &mut [f64]) {
        let p_len = self.positions();
        for ci in 0..self.c {
            for r in 0..self.kh {
                for q in 0..self.kw {
                    let j = (ci * self.kh + r) * self.kw + q;
                    let src = &dcols[j * p_len..(j + 1) * p_len];
                    for oy in 0..self.ho {
                        let iy = oy * self.stride + r;
                        let row = (ci * self.h + iy) * self.w;
                        for ox in 0..self.wo {
                            dx[row + ox * self.stride + q] += src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_impl(
    arch: &Architecture,
    params: &NetworkParams,
    mask: &BinaryMask,
    input: &[f64],
    batch: usize,
    keep_cache: bool,
) -> (Vec<f64>, Vec<Cache>) {
    let mut x = input.to_vec();
    let mut caches = Vec::new();
    let mut p = 0;
    for (li, spec) in arch.layers().iter().enumerate() {
        let (in_shape, out_shape) = arch.layer_shapes(li);
        let (y, cache) = match spec.kind {
            LayerKind::Dense => {
                let lp = &params.layers[p];
                let y = dense_forward(
                    &x,
                    batch,
                    spec,
                    lp.weight.data(),
                    lp.bias.as_ref().map(|b| b.data()),
                    &mask.layers[p],
                );
                p += 1;
                (y, Cache::Dense { input: x })
            }
            LayerKind::Conv2d => {
                let lp = &params.layers[p];
                let m = &mask.layers[p];
                p += 1;
                let g = ConvGeom::new(spec, in_shape, out_shape);
                let p_len = g.positions();
                let (n_in, n_out) = (spec.n_in, spec.n_out);
                let in_len = in_shape.len();
                let w = lp.weight.data();
                let bias = lp.bias.as_ref().map(|b| b.data());
                let mut cols = vec![0.0; batch * n_in * p_len];
                let mut y = vec![0.0; batch * n_out * p_len];
                for s in 0..batch {
                    let cs = &mut cols[s * n_in * p_len..(s + 1) * n_in * p_len];
                    g.im2col(&x[s * in_len..(s + 1) * in_len], cs);
                    let ys = &mut y[s * n_out * p_len..(s + 1) * n_out * p_len];
                    for o in (0..n_out).filter(|&o| m.is_active(o)) {
                        let out = &mut ys[o * p_len..(o + 1) * p_len];
                        out.fill(bias.map_or(0.0, |b| b[o]));
                        for j in 0..n_in {
                            let wv = w[o * n_in + j];
                            for (acc, cv) in out.iter_mut().zip(&cs[j * p_len..(j + 1) * p_len]) {
                                *acc += wv * cv;
                            }
                        }
                    }
                }
                (y, Cache::Conv { cols })
            }
            LayerKind::MaxPool2d => {
                let (c, h, w) = image_dims(in_shape);
                let (_, ho, wo) = image_dims(out_shape);
                let (kh, kw) = spec.kernel;
                let st = spec.stride;
                let in_len = c * h * w;
                let out_len = c * ho * wo;
                let mut y = vec![0.0; batch * out_len];
                let mut argmax = vec![0usize; batch * out_len];
                for s in 0..batch {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    for ci in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut best_idx = (ci * h + oy * st) * w + ox * st;
                                let mut best = xs[best_idx];
                                for r in 0..kh {
                                    for q in 0..kw {
                                        let idx = (ci * h + oy * st + r) * w + ox * st + q;
                                        // strict comparison keeps the first maximum
                                        if xs[idx] > best {
                                            best = xs[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                let o = s * out_len + (ci * ho + oy) * wo + ox;
                                y[o] = best;
                                argmax[o] = best_idx;
                            }
                        }
                    }
                }
                (y, Cache::Pool { argmax })
            }
            LayerKind::Relu => {
                let y = x.iter().map(|v| v.max(0.0)).collect();
                (y, Cache::Relu { input: x })
            }
        };
        if keep_cache {
            caches.push(cache);
        }
        x = y;
    }
    (x, caches)
}

/// Logits `(batch, n_classes)` of the pruned model `w ⊙ p`.
pub fn forward_pass(arch: &Architecture, params: &NetworkParams, mask: &BinaryMask, batch: &Tensor) -> Result<Tensor> {
    let b = check_inputs(arch, params, mask, batch)?;
    let (logits, _) = forward_impl(arch, params, mask, batch.data(), b, false);
    Tensor::from_vec(&[b, arch.output_len()], logits)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 {
        return Err(SpaflError::config(format!("logits must be 2-D, got {:?}", logits.shape())));
    }
    if labels.len() != logits.rows() {
        return Err(SpaflError::data(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.row_len();
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(SpaflError::data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    check_labels(logits, labels)?;
    let b = logits.rows();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let z = logits.row(s);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - z[y];
        let g = grad.row_mut(s);
        for (gi, zi) in g.iter_mut().zip(z) {
            *gi = (zi - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, grad))
}

/// Mean of `-log softmax(logits)[label]` over the batch.
pub fn loss_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

/// Loss and gradients with respect to the dense parameters of the pruned
/// model. Rows of pruned units (weights and bias) get exactly zero gradient.
pub fn backward_pass(
    arch: &Architecture,
    params: &NetworkParams,
    mask: &BinaryMask,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    let b = check_inputs(arch, params, mask, batch)?;
    if labels.len() != b {
        return Err(SpaflError::data(format!("{} labels for a batch of {b}", labels.len())));
    }
    let (out, caches) = forward_impl(arch, params, mask, batch.data(), b, true);
    let logits = Tensor::from_vec(&[b, arch.output_len()], out)?;
    let (loss, dlogits) = cross_entropy_with_grad(&logits, labels)?;
    if !loss.is_finite() {
        return Err(SpaflError::Numeric(format!("loss is not finite ({loss})")));
    }

    let mut grads = GradientSet::zeros(arch);
    let mut dy = dlogits.into_data();
    let mut p = params.layers.len();
    for (li, (spec, cache)) in arch.layers().iter().zip(caches).enumerate().rev() {
        let (in_shape, out_shape) = arch.layer_shapes(li);
        let need_dx = li > 0;
        dy = match (spec.kind, cache) {
            (LayerKind::Dense, Cache::Dense { input }) => {
                p -= 1;
                let (n_in, n_out) = (spec.n_in, spec.n_out);
                let m = &mask.layers[p];
                let w = params.layers[p].weight.data();
                let gl = &mut grads.layers[p];
                let mut dx = if need_dx { vec![0.0; b * n_in] } else { Vec::new() };
                for s in 0..b {
                    let xs = &input[s * n_in..(s + 1) * n_in];
                    for o in (0..n_out).filter(|&o| m.is_active(o)) {
                        let d = dy[s * n_out + o];
                        let gw = &mut gl.weight.data_mut()[o * n_in..(o + 1) * n_in];
                        for (g, xi) in gw.iter_mut().zip(xs) {
                            *g += d * xi;
                        }
                        if let Some(gb) = gl.bias.as_mut() {
                            gb.data_mut()[o] += d;
                        }
                        if need_dx {
                            let dxs = &mut dx[s * n_in..(s + 1) * n_in];
                            for (dxi, wi) in dxs.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                                *dxi += d * wi;
                            }
                        }
                    }
                }
                dx
            }
            (LayerKind::Conv2d, Cache::Conv { cols }) => {
                p -= 1;
                let g = ConvGeom::new(spec, in_shape, out_shape);
                let p_len = g.positions();
                let (n_in, n_out) = (spec.n_in, spec.n_out);
                let in_len = in_shape.len();
                let m = &mask.layers[p];
                let w = params.layers[p].weight.data();
                let gl = &mut grads.layers[p];
                let mut dx = if need_dx { vec![0.0; b * in_len] } else { Vec::new() };
                let mut dcols = vec![0.0; n_in * p_len];
                for s in 0..b {
                    let cs = &cols[s * n_in * p_len..(s + 1) * n_in * p_len];
                    let dys = &dy[s * n_out * p_len..(s + 1) * n_out * p_len];
                    dcols.fill(0.0);
                    for o in (0..n_out).filter(|&o| m.is_active(o)) {
                        let d = &dys[o * p_len..(o + 1) * p_len];
                        if let Some(gb) = gl.bias.as_mut() {
                            gb.data_mut()[o] += d.iter().sum::<f64>();
                        }
                        let gw = &mut gl.weight.data_mut()[o * n_in..(o + 1) * n_in];
                        for (j, gj) in gw.iter_mut().enumerate() {
                            let c = &cs[j * p_len..(j + 1) * p_len];
                            *gj += d.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if need_dx {
                            for j in 0..n_in {
                                let wv = w[o * n_in + j];
                                for (dc, dv) in dcols[j * p_len..(j + 1) * p_len].iter_mut().zip(d) {
                                    *dc += wv * dv;
                                }
                            }
                        }
                    }
                    if need_dx {
                        g.col2im_add(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                dx
            }
            (LayerKind::MaxPool2d, Cache::Pool { argmax }) => {
                let in_len = in_shape.len();
                let out_len = out_shape.len();
                let mut dx = vec![0.0; b * in_len];
                for s in 0..b {
                    for o in 0..out_len {
                        dx[s * in_len + argmax[s * out_len + o]] += dy[s * out_len + o];
                    }
                }
                dx
            }
            (LayerKind::Relu, Cache::Relu { input }) => {
                dy.iter().zip(&input).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect()
            }
            _ => unreachable!("cache kind always matches layer kind"),
        };
    }
    if !grads.all_finite() {
        return Err(SpaflError::Numeric("non-finite gradient".into()));
    }
    Ok((loss, grads))
}
