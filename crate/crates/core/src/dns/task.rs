use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Gaussian-mixture classification task: each class owns
/// `clusters_per_class` centers drawn with spread `center_scale`; points are
/// centers plus isotropic noise of std `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub input_dim: usize,
    pub num_classes: usize,
    pub clusters_per_class: usize,
    pub center_scale: f64,
    pub noise_std: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            input_dim: 8,
            num_classes: 4,
            clusters_per_class: 3,
            center_scale: 1.0,
            noise_std: 0.35,
            train_size: 512,
            val_size: 512,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `idx` as a new split.
    pub fn gather(&self, idx: &[usize]) -> Split {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Split { dim: self.dim, x, y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

/// Train (weights) and validation (architecture / proxy accuracy) splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.input_dim > 64 {
            return Err(Error::Config("task input_dim must be in 1..=64".into()));
        }
        if self.num_classes < 2 || self.clusters_per_class == 0 {
            return Err(Error::Config("task needs >= 2 classes and >= 1 cluster per class".into()));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::Config("task splits must be non-empty".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.center_scale > 0.0) {
            return Err(Error::Config("task noise_std must be >= 0 and center_scale > 0".into()));
        }
        Ok(())
    }

    /// Draws both splits. Train and validation points are independent draws,
    /// so the splits are disjoint samples of the same distribution.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = stream(self.seed, &[0]);
        let centers_n = self.num_classes * self.clusters_per_class;
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let centers: Vec<f64> =
            (0..centers_n * self.input_dim).map(|_| unit.sample(&mut rng) * self.center_scale).collect();
        let draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut x = Vec::with_capacity(n * self.input_dim);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let c = rng.random_range(0..centers_n);
                y.push(c % self.num_classes);
                for d in 0..self.input_dim {
                    x.push(centers[c * self.input_dim + d] + unit.sample(rng) * self.noise_std);
                }
            }
            Split { dim: self.input_dim, x, y }
        };
        let train = draw(self.train_size, &mut rng);
        let val = draw(self.val_size, &mut rng);
        Ok(Dataset { train, val })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let t = SyntheticTask::default();
        let a = t.generate().unwrap();
        assert_eq!(a, t.generate().unwrap());
        assert_eq!(a.train.len(), 512);
        assert_eq!(a.val.x.len(), 512 * 8);
        assert!(a.train.y.iter().all(|&y| y < 4));
        let other = SyntheticTask { seed: 8, ..t.clone() }.generate().unwrap();
        assert_ne!(a.train.x, other.train.x);
        assert!(SyntheticTask { num_classes: 1, ..t }.generate().is_err());
    }
}
