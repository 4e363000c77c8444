//! Datasets, the IDX loader, synthetic clusters and label-shard partitioning.

mod idx;
mod partition;
mod synth;

pub use idx::{load_idx, load_idx_images, load_idx_labels};
pub use partition::{label_shard_partition, partition_stats, PartitionStats, ShardPartition};
pub use synth::{synthesize_clusters, ClusterGenerator};

use crate::error::{check_len, Error, Result};

/// `N × d` row-major features with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("feature dimension must be >= 1"));
        }
        if labels.is_empty() {
            return Err(Error::usage("dataset must contain at least one sample"));
        }
        check_len(labels.len() * dim, features.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    /// Copies the listed rows, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(features, labels, self.dim, self.num_classes)
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Result<LabeledDataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}
