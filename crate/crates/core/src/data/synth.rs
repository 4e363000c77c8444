use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

use super::LabeledDataset;

/// Norm of every class center.
const CENTER_RADIUS: f64 = 2.0;

/// Isotropic Gaussian blobs around seeded random centers on the sphere of
/// radius 2. Centers depend only on the seed, so several sample draws (e.g.
/// train and test) can share them.
#[derive(Clone, Debug)]
pub struct ClusterGenerator {
    centers: Vec<Vec<f64>>,
    spread: f64,
    seed: u64,
}

impl ClusterGenerator {
    pub fn new(num_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::usage("need at least 2 classes"));
        }
        if dim == 0 {
            return Err(Error::usage("feature dimension must be >= 1"));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::usage(format!("spread must be > 0, got {spread}")));
        }
        let mut rng = stream(seed, Purpose::Dataset, 0, 0);
        let centers = (0..num_classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-12 {
                    break v.into_iter().map(|x| CENTER_RADIUS * x / n).collect();
                }
            })
            .collect();
        Ok(ClusterGenerator { centers, spread, seed })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// `per_class` samples of each class, class-major. Distinct `draw` ids
    /// give independent samples around the same centers.
    pub fn sample(&self, per_class: usize, draw: u64) -> Result<LabeledDataset> {
        if per_class == 0 {
            return Err(Error::usage("per-class sample count must be >= 1"));
        }
        let dim = self.centers[0].len();
        let mut rng = stream(self.seed, Purpose::Dataset, 1, draw);
        let mut features = Vec::with_capacity(self.centers.len() * per_class * dim);
        let mut labels = Vec::with_capacity(self.centers.len() * per_class);
        for (c, center) in self.centers.iter().enumerate() {
            for _ in 0..per_class {
                for &m in center {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(m + self.spread * z);
                }
                labels.push(c);
            }
        }
        LabeledDataset::new(features, labels, dim, self.centers.len())
    }
}

pub fn synthesize_clusters(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    ClusterGenerator::new(num_classes, dim, spread, seed)?.sample(per_class, 0)
}
