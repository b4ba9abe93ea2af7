//! Datasets, IDX ingestion, synthetic data and non-iid client partitioning.

mod idx;
mod partition;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{client_split, dirichlet_partition, label_entropy, ClientSplit, Partition, MAX_PARTITION_DRAWS};
pub use synth::synth_dataset;

use crate::error::{Result, SpaflError};
use crate::tensor::Tensor;

/// Labeled samples; `samples` has shape `(n, sample dims...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if samples.rows() == 0 || labels.is_empty() {
            return Err(SpaflError::data("dataset must contain at least one sample"));
        }
        if samples.shape().len() < 2 {
            return Err(SpaflError::data("samples need a leading sample dimension"));
        }
        if samples.rows() != labels.len() {
            return Err(SpaflError::data(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(SpaflError::data(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Dataset {
            samples,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    /// Reinterprets every sample with a new shape of the same size.
    pub fn with_sample_shape(self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            samples: self.samples.reshape(&full)?,
            ..self
        })
    }

    /// Gathers the given rows into a batch tensor and label list.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let row = self.samples.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(self.samples.row(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_vec(&shape, data).expect("batch shape"), labels)
    }
}
