//! Trainable-threshold structured pruning.
//!
//! Every neuron or filter `i` of a prunable layer owns a threshold `tau_i` in
//! `[0, 1]`. The unit stays active while the mean magnitude of its incoming
//! weights is at least its threshold, otherwise its whole weight row (and
//! bias) is masked out.

use crate::error::{Result, SpaflError};
use crate::nn::{Architecture, GradientSet, NetworkParams};
use crate::tensor::Tensor;

/// A layer whose density falls strictly below this has its thresholds reset.
pub const RESET_DENSITY: f64 = 0.01;

/// Per-layer vectors that are not constrained to `[0, 1]`: threshold
/// gradients, global threshold deltas and row magnitudes.
pub type LayerVectors = Vec<Vec<f64>>;

/// Per-layer thresholds, one entry per output unit. This is the only
/// object exchanged between clients and server.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    layers: Vec<Vec<f64>>,
}

impl ThresholdVector {
    pub fn zeros(arch: &Architecture) -> Self {
        ThresholdVector {
            layers: arch.prunable_specs().iter().map(|s| vec![0.0; s.n_out]).collect(),
        }
    }

    /// Builds a vector from explicit values; every entry must lie in `[0, 1]`.
    pub fn from_layers(layers: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = layers.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SpaflError::Numeric(format!("threshold {bad} outside [0, 1]")));
        }
        Ok(ThresholdVector { layers })
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.layers
    }

    /// Total number of thresholds.
    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flatten().copied().collect()
    }

    /// Same layer layout as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(SpaflError::Protocol(format!(
                "threshold payload has {} scalars, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let v = flat[offset..offset + l.len()].to_vec();
                offset += l.len();
                v
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn same_layout(&self, other: &ThresholdVector) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.len() == b.len())
    }

    /// Elementwise `self - older`.
    pub fn delta_from(&self, older: &ThresholdVector) -> LayerVectors {
        self.layers
            .iter()
            .zip(&older.layers)
            .map(|(n, o)| n.iter().zip(o).map(|(a, b)| a - b).collect())
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.flatten() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Structured mask of one layer: a row of `n_in` identical entries per output unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    active: Vec<bool>,
    n_in: usize,
}

impl LayerMask {
    pub fn new(active: Vec<bool>, n_in: usize) -> Self {
        LayerMask { active, n_in }
    }

    pub fn is_active(&self, row: usize) -> bool {
        self.active[row]
    }

    pub fn rows(&self) -> &[bool] {
        &self.active
    }

    pub fn n_out(&self) -> usize {
        self.active.len()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Explicit `(n_out, n_in)` 0/1 matrix.
    pub fn to_matrix(&self) -> Tensor {
        let data = self
            .active
            .iter()
            .flat_map(|&a| std::iter::repeat_n(if a { 1.0 } else { 0.0 }, self.n_in))
            .collect();
        Tensor::from_vec(&[self.active.len(), self.n_in], data).expect("mask matrix shape")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub layers: Vec<LayerMask>,
}

impl BinaryMask {
    fn uniform(arch: &Architecture, active: bool) -> Self {
        BinaryMask {
            layers: arch
                .prunable_specs()
                .iter()
                .map(|s| LayerMask::new(vec![active; s.n_out], s.n_in))
                .collect(),
        }
    }

    pub fn all_active(arch: &Architecture) -> Self {
        Self::uniform(arch, true)
    }

    pub fn all_pruned(arch: &Architecture) -> Self {
        Self::uniform(arch, false)
    }

    pub fn check_layout(&self, arch: &Architecture) -> Result<()> {
        let specs = arch.prunable_specs();
        let ok = specs.len() == self.layers.len()
            && specs
                .iter()
                .zip(&self.layers)
                .all(|(s, m)| s.n_out == m.n_out() && s.n_in == m.n_in());
        if ok {
            Ok(())
        } else {
            Err(SpaflError::config("mask layout does not match the architecture"))
        }
    }
}

/// Mean absolute weight of each row: `mu_i = (1/n_in) * sum_j |w_ij|`.
pub fn row_mean_abs(weights: &Tensor) -> Vec<f64> {
    let n_in = weights.row_len();
    (0..weights.rows())
        .map(|i| weights.row(i).iter().map(|w| w.abs()).sum::<f64>() / n_in as f64)
        .collect()
}

/// Row `i` is kept iff `mu_i >= tau_i`.
pub fn generate_layer_mask(mu: &[f64], tau: &[f64], n_in: usize) -> Result<LayerMask> {
    if mu.len() != tau.len() {
        return Err(SpaflError::config(format!(
            "mask generation: {} magnitudes vs {} thresholds",
            mu.len(),
            tau.len()
        )));
    }
    Ok(LayerMask::new(mu.iter().zip(tau).map(|(m, t)| m - t >= 0.0).collect(), n_in))
}

/// Masks for all prunable layers from the dense weights and thresholds.
pub fn generate_mask(params: &NetworkParams, thresholds: &ThresholdVector) -> Result<BinaryMask> {
    if params.layers.len() != thresholds.layers().len() {
        return Err(SpaflError::config("threshold vector and parameters cover different layer counts"));
    }
    let layers = params
        .layers
        .iter()
        .zip(thresholds.layers())
        .map(|(lp, tau)| generate_layer_mask(&row_mean_abs(&lp.weight), tau, lp.n_in()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BinaryMask { layers })
}

/// Pruned copy `w ⊙ p`; the dense weights are left untouched.
pub fn apply_mask(weights: &Tensor, mask: &LayerMask) -> Tensor {
    let mut out = weights.clone();
    for (i, &active) in mask.rows().iter().enumerate() {
        if !active {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

/// `R = sum_l sum_i exp(-tau_i)`.
pub fn sparsity_regularizer(thresholds: &ThresholdVector) -> f64 {
    thresholds.layers().iter().flatten().map(|t| (-t).exp()).sum()
}

/// Straight-through threshold gradient `h_i = -sum_j g_ij * w_ij`.
///
/// Pruned rows carry zero weight gradients, so they contribute nothing.
pub fn threshold_gradient(grads: &GradientSet, params: &NetworkParams, mask: &BinaryMask) -> LayerVectors {
    grads
        .layers
        .iter()
        .zip(&params.layers)
        .zip(&mask.layers)
        .map(|((g, p), m)| {
            (0..p.n_out())
                .map(|i| {
                    if !m.is_active(i) {
                        return 0.0;
                    }
                    -g.weight
                        .row(i)
                        .iter()
                        .zip(p.weight.row(i))
                        .map(|(gij, wij)| gij * wij)
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// `tau <- clamp01(tau - lr*h + alpha*lr*exp(-tau))`.
pub fn threshold_step(thresholds: &mut ThresholdVector, h: &[Vec<f64>], lr: f64, alpha: f64) {
    for (tau, hl) in thresholds.layers_mut().iter_mut().zip(h) {
        for (t, g) in tau.iter_mut().zip(hl) {
            let next = *t - lr * g + alpha * lr * (-*t).exp();
            *t = next.clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    /// Active rows over `n_out`, per layer.
    pub per_layer: Vec<f64>,
    /// Active weights over all weights.
    pub overall: f64,
}

pub fn density_metrics(mask: &BinaryMask) -> DensityReport {
    let per_layer = mask
        .layers
        .iter()
        .map(|m| m.active_count() as f64 / m.n_out() as f64)
        .collect();
    let (active, total) = mask.layers.iter().fold((0usize, 0usize), |(a, t), m| {
        (a + m.active_count() * m.n_in(), t + m.n_out() * m.n_in())
    });
    let overall = if total == 0 { 0.0 } else { active as f64 / total as f64 };
    DensityReport { per_layer, overall }
}

/// Mean of several reports (e.g. across clients).
pub fn mean_density(reports: &[DensityReport]) -> Option<DensityReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mut per_layer = vec![0.0; first.per_layer.len()];
    let mut overall = 0.0;
    for r in reports {
        for (acc, v) in per_layer.iter_mut().zip(&r.per_layer) {
            *acc += v;
        }
        overall += r.overall;
    }
    per_layer.iter_mut().for_each(|v| *v /= n);
    Some(DensityReport {
        per_layer,
        overall: overall / n,
    })
}

/// Zeroes the thresholds of every layer whose density is below
/// [`RESET_DENSITY`]. Returns the indices of reset layers.
pub fn layer_reset(thresholds: &mut ThresholdVector, report: &DensityReport) -> Vec<usize> {
    let mut reset = Vec::new();
    for (l, (tau, &rho)) in thresholds.layers_mut().iter_mut().zip(&report.per_layer).enumerate() {
        if rho < RESET_DENSITY {
            tau.fill(0.0);
            reset.push(l);
        }
    }
    reset
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        let n_in = rows[0].len();
        Tensor::from_vec(&[rows.len(), n_in], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn row_mean_abs_examples() {
        assert_eq!(row_mean_abs(&t2(&[&[0.2, -0.4]]))[0], (0.2 + 0.4) / 2.0);
        assert!(close(row_mean_abs(&t2(&[&[0.2, -0.4]]))[0], 0.3, 1e-15));
        assert_eq!(row_mean_abs(&t2(&[&[0.0, 0.0, 0.0]])), vec![0.0]);
        assert_eq!(row_mean_abs(&t2(&[&[1.0, -1.0, 1.0, -1.0]])), vec![1.0]);
    }

    #[test]
    fn generate_mask_examples() {
        let m = generate_layer_mask(&[0.3, 0.1], &[0.2, 0.2], 3).unwrap();
        assert_eq!(m.rows(), &[true, false]);

        let m = generate_layer_mask(&[0.01, 0.5], &[0.0, 0.0], 2).unwrap();
        assert_eq!(m.active_count(), 2);

        let m = generate_layer_mask(&[0.99, 0.3], &[1.0, 1.0], 2).unwrap();
        assert_eq!(m.active_count(), 0);

        assert!(generate_layer_mask(&[0.1], &[0.1, 0.2], 1).is_err());
    }

    #[test]
    fn equality_keeps_row() {
        let m = generate_layer_mask(&[0.25, 0.0], &[0.25, 0.0], 1).unwrap();
        assert_eq!(m.rows(), &[true, true]);
    }

    #[test]
    fn apply_mask_examples() {
        let w = t2(&[&[0.1, 0.2], &[0.3, -0.4], &[0.5, 0.6]]);
        assert_eq!(apply_mask(&w, &LayerMask::new(vec![true; 3], 2)), w);
        assert!(apply_mask(&w, &LayerMask::new(vec![false; 3], 2)).data().iter().all(|v| *v == 0.0));
        let mixed = apply_mask(&w, &LayerMask::new(vec![true, false, true], 2));
        assert_eq!(mixed.row(0), w.row(0));
        assert_eq!(mixed.row(1), &[0.0, 0.0]);
        assert_eq!(mixed.row(2), w.row(2));
        // source untouched
        assert_eq!(w.row(1), &[0.3, -0.4]);
    }

    #[test]
    fn regularizer_examples() {
        let lenet = Architecture::lenet5(10);
        assert_eq!(sparsity_regularizer(&ThresholdVector::zeros(&lenet)), 580.0);
        let ones = ThresholdVector::from_layers(vec![vec![1.0; 10]]).unwrap();
        assert!(close(sparsity_regularizer(&ones), 3.678794, 1e-6));
        let mixed = ThresholdVector::from_layers(vec![vec![0.0, 1.0]]).unwrap();
        assert!(close(sparsity_regularizer(&mixed), 1.367879, 1e-6));
    }

    #[test]
    fn threshold_gradient_examples() {
        let arch = Architecture::new(&[2], vec![crate::nn::LayerSpec::dense(2, 2)]).unwrap();
        let mut params = NetworkParams::zeros(&arch);
        params.layers[0].weight = t2(&[&[0.5, 0.5], &[0.3, 0.3]]);
        let mut grads = GradientSet::zeros(&arch);
        grads.layers[0].weight = t2(&[&[0.1, -0.2], &[0.0, 0.0]]);
        let h = threshold_gradient(&grads, &params, &BinaryMask::all_active(&arch));
        assert!(close(h[0][0], 0.05, 1e-15));
        assert_eq!(h[0][1], 0.0);

        let zero_w = NetworkParams::zeros(&arch);
        let h = threshold_gradient(&grads, &zero_w, &BinaryMask::all_active(&arch));
        assert_eq!(h[0][0], 0.0);

        let pruned = BinaryMask {
            layers: vec![LayerMask::new(vec![false, true], 2)],
        };
        assert_eq!(threshold_gradient(&grads, &params, &pruned)[0][0], 0.0);
    }

    #[test]
    fn threshold_step_examples() {
        let mut tau = ThresholdVector::from_layers(vec![vec![0.5]]).unwrap();
        threshold_step(&mut tau, &[vec![0.0]], 0.1, 0.002);
        assert!(close(tau.layer(0)[0], 0.5 + 0.1 * 0.002 * (-0.5f64).exp(), 1e-15));
        assert!(close(tau.layer(0)[0], 0.500121, 1e-6));

        let mut tau = ThresholdVector::from_layers(vec![vec![0.5]]).unwrap();
        threshold_step(&mut tau, &[vec![0.0]], 0.1, 0.0);
        assert_eq!(tau.layer(0)[0], 0.5);

        let mut tau = ThresholdVector::from_layers(vec![vec![1.0]]).unwrap();
        threshold_step(&mut tau, &[vec![0.0]], 0.1, 0.002);
        assert_eq!(tau.layer(0)[0], 1.0);
    }

    #[test]
    fn density_examples() {
        let all = BinaryMask {
            layers: vec![LayerMask::new(vec![true; 4], 3)],
        };
        assert_eq!(density_metrics(&all).overall, 1.0);

        let mut rows = vec![false; 20];
        rows[..5].fill(true);
        let r = density_metrics(&BinaryMask {
            layers: vec![LayerMask::new(rows, 7)],
        });
        assert_eq!(r.per_layer[0], 0.25);

        // 10x10 at 50% and 30x10 fully dense
        let r = density_metrics(&BinaryMask {
            layers: vec![
                LayerMask::new((0..10).map(|i| i < 5).collect(), 10),
                LayerMask::new(vec![true; 30], 10),
            ],
        });
        assert_eq!(r.overall, 350.0 / 400.0);
    }

    #[test]
    fn layer_reset_examples() {
        let mut tau = ThresholdVector::from_layers(vec![vec![0.4; 3], vec![0.7; 2]]).unwrap();
        let report = DensityReport {
            per_layer: vec![0.005, 0.5],
            overall: 0.3,
        };
        assert_eq!(layer_reset(&mut tau, &report), vec![0]);
        assert_eq!(tau.layer(0), &[0.0; 3]);
        assert_eq!(tau.layer(1), &[0.7; 2]);

        let mut tau = ThresholdVector::from_layers(vec![vec![0.4; 3]]).unwrap();
        let at_bound = DensityReport {
            per_layer: vec![0.01],
            overall: 0.01,
        };
        assert!(layer_reset(&mut tau, &at_bound).is_empty());
        assert_eq!(tau.layer(0), &[0.4; 3]);
    }

    #[test]
    fn from_layers_rejects_out_of_range() {
        assert!(ThresholdVector::from_layers(vec![vec![1.5]]).is_err());
        assert!(ThresholdVector::from_layers(vec![vec![-0.1]]).is_err());
    }

    proptest! {
        #[test]
        fn masks_are_row_constant(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 1..12),
            taus in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let w = Tensor::from_vec(&[rows.len(), 5], rows.concat()).unwrap();
            let tau = &taus[..rows.len()];
            let m = generate_layer_mask(&row_mean_abs(&w), tau, 5).unwrap();
            let mat = m.to_matrix();
            for i in 0..rows.len() {
                let r = mat.row(i);
                prop_assert!(r.iter().all(|v| *v == r[0]));
                prop_assert!(r[0] == 0.0 || r[0] == 1.0);
            }
        }

        #[test]
        fn threshold_steps_stay_in_unit_interval(
            init in proptest::collection::vec(0.0f64..=1.0, 1..8),
            hs in proptest::collection::vec(-50.0f64..50.0, 40),
            lr in 0.0f64..1.0,
            alpha in 0.0f64..=1.0,
        ) {
            let n = init.len();
            let mut tau = ThresholdVector::from_layers(vec![init]).unwrap();
            for chunk in hs.chunks(n) {
                let mut h = chunk.to_vec();
                h.resize(n, 0.0);
                threshold_step(&mut tau, &[h], lr, alpha);
                prop_assert!(tau.layer(0).iter().all(|t| (0.0..=1.0).contains(t)));
            }
        }

        #[test]
        fn regularizer_pushes_thresholds_up(
            init in proptest::collection::vec(0.0f64..0.999, 1..8),
            lr in 1e-4f64..1.0,
            alpha in 1e-3f64..=1.0,
        ) {
            let before = init.clone();
            let n = init.len();
            let mut tau = ThresholdVector::from_layers(vec![init]).unwrap();
            threshold_step(&mut tau, &[vec![0.0; n]], lr, alpha);
            for (a, b) in tau.layer(0).iter().zip(&before) {
                prop_assert!(a > b);
            }
        }

        #[test]
        fn lowered_threshold_reactivates_row(
            row in proptest::collection::vec(-1.0f64..1.0, 1..10),
            excess in 1e-6f64..0.5,
        ) {
            let n = row.len();
            let w = Tensor::from_vec(&[1, n], row).unwrap();
            let mu = row_mean_abs(&w)[0];
            let high = (mu + excess).min(1.0);
            prop_assume!(high > mu);
            let pruned = generate_layer_mask(&[mu], &[high], n).unwrap();
            prop_assert!(!pruned.is_active(0));
            // threshold later drops below mu (e.g. via aggregation)
            let recovered = generate_layer_mask(&[mu], &[mu * 0.5], n).unwrap();
            prop_assert!(recovered.is_active(0));
        }
    }
}
