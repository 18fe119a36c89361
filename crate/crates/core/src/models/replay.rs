use super::ConditionalGenerator;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// "Generator" that replays a fixed dataset class by class.
///
/// Class `c` yields its samples in dataset order, cycling when more are
/// requested than exist; the seed and stddev are ignored. Serves as the
/// identity source when comparing synthetic training against real training.
#[derive(Debug, Clone)]
pub struct ReplayGenerator<T> {
    by_class: Vec<Vec<Vec<T>>>,
    feature_dim: usize,
    id: u64,
}

impl<T: Real> ReplayGenerator<T> {
    pub fn new(data: &Dataset<T>) -> Self {
        let mut by_class = vec![Vec::new(); data.num_classes()];
        for s in data.iter() {
            by_class[s.label].push(s.features.clone());
        }
        Self {
            by_class,
            feature_dim: data.feature_dim(),
            id: data.fingerprint(),
        }
    }
}

impl<T: Real> ConditionalGenerator<T> for ReplayGenerator<T> {
    fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn sample(&self, class: usize, count: usize, _stddev: T, _seed: u64) -> Result<Vec<Vec<T>>> {
        let pool = self
            .by_class
            .get(class)
            .ok_or_else(|| Error::Usage(format!("class {class} out of range")))?;
        if pool.is_empty() && count > 0 {
            return Err(Error::Usage(format!("class {class} has no samples to replay")));
        }
        Ok((0..count).map(|i| pool[i % pool.len()].clone()).collect())
    }

    fn id(&self) -> u64 {
        self.id
    }
}
