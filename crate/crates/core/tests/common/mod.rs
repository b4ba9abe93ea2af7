#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spafl::nn::{
    backward_pass, finite_diff_oracle, forward_pass, loss_cross_entropy, Architecture, LayerKind, LayerSpec,
    NetworkParams, ParamIndex, ParamSlot,
};
use spafl::pruning::{generate_mask, threshold_gradient, BinaryMask, ThresholdVector};
use spafl::tensor::Tensor;

pub struct GradCase {
    pub arch: Architecture,
    pub params: NetworkParams,
    pub mask: BinaryMask,
    pub batch: Tensor,
    pub labels: Vec<usize>,
}

/// Small conv -> relu -> pool -> dense -> relu -> dense network with random
/// shapes, weights, thresholds and inputs.
pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let c = rng.random_range(1..=2);
        let h = rng.random_range(6..=9);
        let w = rng.random_range(6..=9);
        let k = (rng.random_range(2..=3), rng.random_range(2..=3));
        let stride = rng.random_range(1..=2);
        let filters = rng.random_range(2..=4);
        let oh = (h - k.0) / stride + 1;
        let ow = (w - k.1) / stride + 1;
        if oh < 2 || ow < 2 {
            continue;
        }
        let (ph, pw) = (oh / 2, ow / 2);
        let flat = filters * ph * pw;
        let hidden = rng.random_range(3..=6);
        let classes = rng.random_range(2..=4);
        let mut conv = LayerSpec::conv2d(c, filters, k, stride);
        if rng.random_bool(0.3) {
            conv = conv.without_bias();
        }
        let layers = vec![
            conv,
            LayerSpec::relu(),
            LayerSpec::max_pool((2, 2), 2),
            LayerSpec::dense(flat, hidden),
            LayerSpec::relu(),
            LayerSpec::dense(hidden, classes),
        ];
        let arch = match Architecture::new(&[c, h, w], layers) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let mut params = NetworkParams::init(&arch, &mut rng);
        for layer in &mut params.layers {
            for v in layer.weight.data_mut() {
                *v *= 2.0;
            }
        }
        // thresholds prune roughly a quarter of the rows
        let tau_layers = params
            .layers
            .iter()
            .map(|l| {
                (0..l.n_out())
                    .map(|i| {
                        let mu = l.weight.row(i).iter().map(|x| x.abs()).sum::<f64>() / l.n_in() as f64;
                        if rng.random_bool(0.25) {
                            (mu * 1.5).min(1.0)
                        } else {
                            mu * rng.random_range(0.0..0.5)
                        }
                    })
                    .collect()
            })
            .collect();
        let tau = ThresholdVector::from_layers(tau_layers).unwrap();
        let mask = generate_mask(&params, &tau).unwrap();
        let b = rng.random_range(1..=3);
        let data = (0..b * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = Tensor::from_vec(&[b, c, h, w], data).unwrap();
        let labels = (0..b).map(|_| rng.random_range(0..classes)).collect();
        assert!(arch.layers().iter().any(|l| l.kind == LayerKind::Conv2d));
        return GradCase {
            arch,
            params,
            mask,
            batch,
            labels,
        };
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub params_checked: usize,
    pub thresholds_checked: usize,
    pub worst_param_rel: f64,
    pub worst_threshold_rel: f64,
}

const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-7;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Loss derivative with respect to a common scale `s` of row `i`'s weights at
/// `s = 1`; the unit's threshold gradient is its negative.
fn row_scale_oracle(case: &GradCase, layer: usize, row: usize) -> f64 {
    let eval = |s: f64| {
        let mut p = case.params.clone();
        for v in p.layers[layer].weight.row_mut(row) {
            *v *= s;
        }
        let z = forward_pass(&case.arch, &p, &case.mask, &case.batch).unwrap();
        loss_cross_entropy(&z, &case.labels).unwrap()
    };
    (eval(1.0 + STEP) - eval(1.0 - STEP)) / (2.0 * STEP)
}

/// Compares analytic parameter gradients and threshold gradients against
/// finite differences for every unpruned parameter and every threshold.
pub fn check_case(case: &GradCase) -> GradReport {
    let (_, grads) = backward_pass(&case.arch, &case.params, &case.mask, &case.batch, &case.labels).unwrap();
    let mut report = GradReport::default();
    for (l, layer) in case.params.layers.iter().enumerate() {
        let n_in = layer.n_in();
        for offset in 0..layer.weight.len() {
            if !case.mask.layers[l].is_active(offset / n_in) {
                assert_eq!(grads.layers[l].weight.data()[offset], 0.0);
                continue;
            }
            let idx = ParamIndex {
                layer: l,
                slot: ParamSlot::Weight,
                offset,
            };
            let fd = finite_diff_oracle(&case.arch, &case.params, &case.mask, &case.batch, &case.labels, idx, STEP)
                .unwrap();
            let e = rel_err(grads.layers[l].weight.data()[offset], fd);
            report.worst_param_rel = report.worst_param_rel.max(e);
            report.params_checked += 1;
        }
        if let Some(bias) = &layer.bias {
            for offset in 0..bias.len() {
                if !case.mask.layers[l].is_active(offset) {
                    continue;
                }
                let idx = ParamIndex {
                    layer: l,
                    slot: ParamSlot::Bias,
                    offset,
                };
                let fd =
                    finite_diff_oracle(&case.arch, &case.params, &case.mask, &case.batch, &case.labels, idx, STEP)
                        .unwrap();
                let analytic = grads.layers[l].bias.as_ref().unwrap().data()[offset];
                report.worst_param_rel = report.worst_param_rel.max(rel_err(analytic, fd));
                report.params_checked += 1;
            }
        }
    }
    let h = threshold_gradient(&grads, &case.params, &case.mask);
    for (l, hl) in h.iter().enumerate() {
        for (i, &hi) in hl.iter().enumerate() {
            let oracle = if case.mask.layers[l].is_active(i) {
                -row_scale_oracle(case, l, i)
            } else {
                0.0
            };
            report.worst_threshold_rel = report.worst_threshold_rel.max(rel_err(hi, oracle));
            report.thresholds_checked += 1;
        }
    }
    report
}

/// Width-one rows: the importance update must equal `w - dtau * sign(w)`
/// bit for bit. Returns the number of mismatches over `cases` draws.
pub fn width_one_mismatches(cases: usize, seed: u64) -> usize {
    use spafl::fl::importance_update;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::new(&[1], vec![LayerSpec::dense(1, 4)]).unwrap();
    let mut mismatches = 0;
    for _ in 0..cases {
        let mut params = NetworkParams::init(&arch, &mut rng);
        for v in params.layers[0].weight.data_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
        let delta: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
        let before = params.layers[0].weight.data().to_vec();
        importance_update(&mut params, std::slice::from_ref(&delta)).unwrap();
        for (i, (&w0, &w1)) in before.iter().zip(params.layers[0].weight.data()).enumerate() {
            let sign = if w0 >= 0.0 { 1.0 } else { -1.0 };
            let expected = (w0 - delta[i] * sign).clamp(-1.0, 1.0);
            if expected.to_bits() != w1.to_bits() {
                mismatches += 1;
            }
        }
    }
    mismatches
}
