#![allow(dead_code)]

pub mod numerics;

use std::sync::Mutex;

use gafi::data::{make_rings, split, Dataset, SplitSpec};
use gafi::models::{ConditionalGenerator, ProbabilisticClassifier};
use gafi::scalar::argmax;
use gafi::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hands out a fixed per-class candidate list in order, wrapping at the end.
/// Ignores seed and stddev so a test knows exactly which candidates were drawn.
pub struct PoolGenerator {
    pub pools: Vec<Vec<Vec<f64>>>,
    cursors: Mutex<Vec<usize>>,
}

impl PoolGenerator {
    pub fn new(pools: Vec<Vec<Vec<f64>>>) -> Self {
        let n = pools.len();
        Self {
            pools,
            cursors: Mutex::new(vec![0; n]),
        }
    }

    /// `total` uniform points in `[-3, 3]^dim`, dealt round-robin to classes.
    pub fn random(classes: usize, dim: usize, total: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pools = vec![Vec::new(); classes];
        for i in 0..total {
            pools[i % classes].push((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect());
        }
        Self::new(pools)
    }
}

impl ConditionalGenerator<f64> for PoolGenerator {
    fn num_classes(&self) -> usize {
        self.pools.len()
    }

    fn feature_dim(&self) -> usize {
        self.pools[0][0].len()
    }

    fn sample(&self, class: usize, count: usize, _: f64, _: u64) -> Result<Vec<Vec<f64>>> {
        let mut cursors = self.cursors.lock().unwrap();
        let pool = &self.pools[class];
        let out = (0..count).map(|i| pool[(cursors[class] + i) % pool.len()].clone()).collect();
        cursors[class] += count;
        Ok(out)
    }

    fn id(&self) -> u64 {
        0
    }
}

/// Candidates of `pool` kept by a literal reading of the filter rule.
pub fn brute_force_filter(
    pool: &[Vec<f64>],
    class: usize,
    oracle: &dyn ProbabilisticClassifier<f64>,
    threshold: f64,
) -> Vec<Vec<f64>> {
    pool.iter()
        .filter(|x| {
            let p = oracle.predict_proba(x);
            let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            best == class && p[class] >= threshold
        })
        .cloned()
        .collect()
}

/// Always predicts `class` with certainty.
pub struct ConstantOracle {
    pub class: usize,
    pub classes: usize,
}

impl ProbabilisticClassifier<f64> for ConstantOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn predict_proba(&self, _: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        p[self.class] = 1.0;
        p
    }
}

/// Two noisy rings at radii 1 and 2, 3000 train and 1000 test points.
pub fn rings_benchmark(seed: u64) -> (Dataset<f64>, Dataset<f64>) {
    let all = make_rings(2, 2000, &[1.0, 2.0], 0.15, seed).unwrap();
    split(&all, SplitSpec::new(0.75, seed).unwrap()).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Top-1 hits counted one sample at a time.
pub fn recount_accuracy(model: &dyn ProbabilisticClassifier<f64>, test: &Dataset<f64>) -> f64 {
    let hits = test
        .iter()
        .filter(|s| argmax(&model.predict_proba(&s.features)) == s.label)
        .count();
    hits as f64 / test.len() as f64
}
