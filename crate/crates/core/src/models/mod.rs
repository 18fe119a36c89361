//! Desk-scale conditional generators, probabilistic classifiers and the
//! latent noise sampler.

mod checkpoint;
pub mod classifier;
pub mod gan;
pub mod gmm;
mod optim;
mod replay;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::linalg::Matrix;
use crate::scalar::{argmax, Real};
use crate::seed::{rng_from, standard_normal};

pub use checkpoint::{GeneratorCheckpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use classifier::{fit_classifier, Classifier, ClassifierKind, ClassifierTrainer};
pub use gan::{fit_tiny_gan, fit_tiny_gan_with, gan_sample, GanConfig, GanTrace};
pub use gmm::{fit_gmm_generator, gmm_sample, GmmConfig};
pub use replay::ReplayGenerator;

/// Isotropic Gaussian latent noise `N(0, stddev²·I)` of width `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSource<T> {
    pub dim: usize,
    pub stddev: T,
}

impl<T: Real> NoiseSource<T> {
    pub fn new(dim: usize, stddev: T) -> Result<Self> {
        if !(stddev >= T::zero()) || !stddev.is_finite() {
            return Err(config_err("noise stddev must be finite and non-negative"));
        }
        Ok(Self { dim, stddev })
    }

    /// The training-time distribution, `stddev = 1`.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            stddev: T::one(),
        }
    }
}

/// `count × dim` matrix of independent `N(0, s²)` draws.
pub fn sample_latent<T: Real>(source: NoiseSource<T>, count: usize, seed: u64) -> Matrix<T> {
    let mut rng = rng_from(seed);
    Matrix::from_fn(count, source.dim, |_, _| {
        source.stddev * standard_normal::<T>(&mut rng)
    })
}

/// A generator that can be sampled conditionally on a class label.
pub trait ConditionalGenerator<T: Real>: Send + Sync {
    fn num_classes(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// `count` feature vectors for class `class` with latent stddev `stddev`.
    /// Must be a pure function of its arguments.
    fn sample(&self, class: usize, count: usize, stddev: T, seed: u64) -> Result<Vec<Vec<T>>>;

    /// Stable identity used in configuration fingerprints.
    fn id(&self) -> u64;
}

/// A classifier exposing class probabilities.
pub trait ProbabilisticClassifier<T: Real>: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Probability vector over all classes; non-negative, sums to one.
    fn predict_proba(&self, features: &[T]) -> Vec<T>;

    /// Most probable class, ties to the lowest index.
    fn predict(&self, features: &[T]) -> usize {
        argmax(&self.predict_proba(features))
    }

    /// Row-wise probabilities for a batch of samples.
    fn predict_proba_batch(&self, features: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(features.rows(), self.num_classes());
        for r in 0..features.rows() {
            out.row_mut(r).copy_from_slice(&self.predict_proba(features.row(r)));
        }
        out
    }
}

/// Mini-batch SGD recipe for classifier training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBudget {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at whose start the rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
}

fn default_decay_factor() -> f64 {
    0.1
}

impl TrainingBudget {
    /// Desk-scale default: 100 epochs with tenfold decays at 60 and 80.
    pub fn desk_default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.1,
            decay_epochs: vec![60, 80],
            decay_factor: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("budget: epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("budget: learning_rate must be positive"));
        }
        if !(self.decay_factor > 0.0) {
            return Err(config_err("budget: decay_factor must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.momentum >= 0.0) {
            return Err(config_err("budget: weight_decay and momentum must be non-negative"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("budget: decay_epochs must be strictly increasing"));
        }
        if self.decay_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(config_err("budget: decay_epochs must be smaller than epochs"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }

    /// Shrinks the epoch count by `scale`, compressing the decay schedule
    /// proportionally.
    pub fn scaled(&self, scale: f64) -> Self {
        let epochs = ((self.epochs as f64 * scale).round() as usize).max(1);
        let mut decay_epochs: Vec<usize> = self
            .decay_epochs
            .iter()
            .map(|&e| (e as f64 * scale).round() as usize)
            .filter(|&e| e < epochs)
            .collect();
        decay_epochs.dedup();
        Self {
            epochs,
            decay_epochs,
            ..self.clone()
        }
    }
}
