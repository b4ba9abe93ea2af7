use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Result, SpaflError};
use crate::tensor::Tensor;

/// Balanced Gaussian-mixture classification data.
///
/// Each class has a unit-norm mean drawn from the seed; samples are
/// `mean + spread * N(0, I)`, mapped through `x -> (x + 1) / 2` and clipped
/// to `[0, 1]`. Samples are ordered class by class.
pub fn synth_dataset(n_classes: usize, dim: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || dim == 0 || n_per_class == 0 {
        return Err(SpaflError::config(
            "synthetic data needs n_classes >= 2, dim >= 1 and n_per_class >= 1",
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(SpaflError::config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for m in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let x = m + spread * noise;
                data.push(((x + 1.0) / 2.0).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::from_vec(&[n, dim], data)?, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_collapses_to_mean() {
        let ds = synth_dataset(3, 5, 4, 0.0, 11).unwrap();
        for c in 0..3 {
            let first = ds.sample(c * 4).to_vec();
            for k in 1..4 {
                assert_eq!(ds.sample(c * 4 + k), &first[..]);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_dataset(4, 8, 10, 0.3, 42).unwrap();
        let b = synth_dataset(4, 8, 10, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(4, 8, 10, 0.3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nearest_centroid_separates_small_spread() {
        let ds = synth_dataset(10, 64, 100, 0.05, 7).unwrap();
        let dim = 64;
        let mut centroids = vec![vec![0.0; dim]; 10];
        let mut counts = vec![0usize; 10];
        for i in 0..ds.len() {
            let y = ds.labels()[i];
            counts[y] += 1;
            for (c, x) in centroids[y].iter_mut().zip(ds.sample(i)) {
                *c += x;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let correct = (0..ds.len())
            .filter(|&i| {
                let x = ds.sample(i);
                let best = (0..10)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                        let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == ds.labels()[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 > 0.95);
    }

    #[test]
    fn inputs_lie_in_unit_interval() {
        let ds = synth_dataset(2, 3, 50, 2.0, 1).unwrap();
        assert!(ds.samples().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(synth_dataset(1, 3, 5, 0.1, 0).is_err());
        assert!(synth_dataset(2, 0, 5, 0.1, 0).is_err());
    }
}
