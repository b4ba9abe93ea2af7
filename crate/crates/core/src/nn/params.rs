use rand::Rng;

use super::Architecture;
use crate::error::{Result, SpaflError};
use crate::tensor::Tensor;

/// Weight matrix `(n_out, n_in)` and optional bias `(n_out)` of one prunable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl LayerParams {
    pub fn n_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn n_in(&self) -> usize {
        self.weight.row_len()
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            weight: Tensor::zeros(self.weight.shape()),
            bias: self.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.weight).chain(self.bias.iter())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.iter_mut())
    }
}

/// Dense parameters of every prunable layer, in architecture order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

/// One gradient tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

fn zero_layers(arch: &Architecture) -> Vec<LayerParams> {
    arch.prunable_specs()
        .into_iter()
        .map(|spec| LayerParams {
            weight: Tensor::zeros(&[spec.n_out, spec.n_in]),
            bias: spec.has_bias.then(|| Tensor::zeros(&[spec.n_out])),
        })
        .collect()
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        NetworkParams {
            layers: zero_layers(arch),
        }
    }

    /// Uniform in `[-b, b]` with `b = sqrt(1 / n_in)` per layer, then clamped to `[-1, 1]`.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        for layer in &mut params.layers {
            let bound = (1.0 / layer.n_in() as f64).sqrt();
            for t in layer.tensors_mut() {
                for v in t.data_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
            }
        }
        super::clamp_parameters(&mut params);
        params
    }

    pub fn scalar_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(Tensor::len).sum()
    }

    /// All weights and biases in layer order (weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) onto this parameter layout.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(SpaflError::Protocol(format!(
                "parameter payload has {} scalars, expected {}",
                flat.len(),
                self.scalar_count()
            )));
        }
        let mut offset = 0;
        for t in self.layers.iter_mut().flat_map(|l| l.tensors_mut()) {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn check_layout(&self, arch: &Architecture) -> Result<()> {
        let specs = arch.prunable_specs();
        if specs.len() != self.layers.len() {
            return Err(SpaflError::config(format!(
                "parameters cover {} layers, architecture has {} prunable layers",
                self.layers.len(),
                specs.len()
            )));
        }
        for (i, (spec, lp)) in specs.iter().zip(&self.layers).enumerate() {
            if lp.weight.shape() != [spec.n_out, spec.n_in] {
                return Err(SpaflError::config(format!(
                    "layer {i}: weight shape {:?} does not match ({}, {})",
                    lp.weight.shape(),
                    spec.n_out,
                    spec.n_in
                )));
            }
            if lp.bias.is_some() != spec.has_bias {
                return Err(SpaflError::config(format!("layer {i}: bias presence mismatch")));
            }
        }
        Ok(())
    }

    /// Order-sensitive 64-bit fingerprint of the exact bit patterns.
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

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.tensors()).all(Tensor::is_finite)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradientSet {
            layers: params.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        GradientSet {
            layers: zero_layers(arch),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.tensors()).all(Tensor::is_finite)
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let arch = Architecture::mlp(16, &[8], 3).unwrap();
        let p = NetworkParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(1));
        p.check_layout(&arch).unwrap();
        let b0 = (1.0f64 / 16.0).sqrt();
        assert!(p.layers[0].weight.data().iter().all(|w| w.abs() <= b0));
        assert_eq!(p.scalar_count(), arch.parameter_count());
    }

    #[test]
    fn flat_round_trip() {
        let arch = Architecture::mlp(5, &[4], 2).unwrap();
        let p = NetworkParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(9));
        let mut q = NetworkParams::zeros(&arch);
        q.load_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.fingerprint(), q.fingerprint());
        assert!(q.load_flat(&[0.0]).is_err());
    }
}
