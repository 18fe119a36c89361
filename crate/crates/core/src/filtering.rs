//! Oracle-gated rejection sampling of generated data.
//!
//! A candidate of conditioning class `c` is kept only when the oracle
//! predicts `c` and assigns it probability at least the threshold. Generation
//! repeats in batches until every class quota is filled.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{config_err, Error, Result};
use crate::linalg::Matrix;
use crate::models::{ConditionalGenerator, ProbabilisticClassifier};
use crate::scalar::{argmax, Real};
use crate::seed::{derive_seed, rng_from};

/// Smallest rejection-sampling batch per class.
pub const MIN_BATCH: usize = 256;
pub const DEFAULT_MAX_ATTEMPT_FACTOR: usize = 200;

/// Inclusive arithmetic grid `start, start + step, …, end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Grid {
    pub const fn new(start: f64, end: f64, step: f64) -> Self {
        Self { start, end, step }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(config_err("grid step must be positive and bounds finite"));
        }
        if self.start > self.end {
            return Err(config_err("grid start must not exceed end"));
        }
        Ok(())
    }

    /// Grid points; the count is `floor((end − start)/step) + 1` with a small
    /// tolerance so representation error does not drop the endpoint.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                // Snap to 1e-12 so labels read as 0.3 rather than 0.30000000000000004.
                (v * 1e12).round() / 1e12
            })
            .collect()
    }
}

/// Threshold in force plus the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterPolicy {
    /// `None` disables filtering entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default = "FilterPolicy::default_grid")]
    pub grid: Grid,
}

impl FilterPolicy {
    pub const fn default_grid() -> Grid {
        Grid::new(0.0, 0.9, 0.1)
    }

    pub fn off() -> Self {
        Self {
            threshold: None,
            grid: Self::default_grid(),
        }
    }

    pub fn at(threshold: f64) -> Self {
        Self {
            threshold: Some(threshold),
            grid: Self::default_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_threshold_grid(&self.grid)?;
        if let Some(t) = self.threshold {
            if !(0.0..1.0).contains(&t) {
                return Err(config_err(format!("threshold {t} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

fn validate_threshold_grid(grid: &Grid) -> Result<()> {
    grid.validate()?;
    if grid.start < 0.0 || grid.end >= 1.0 {
        return Err(config_err("threshold grid must satisfy 0 <= t0 <= tf < 1"));
    }
    Ok(())
}

/// Thresholds `t0, t0 + step, …, tf`.
pub fn threshold_grid(policy: &FilterPolicy) -> Result<Vec<f64>> {
    validate_threshold_grid(&policy.grid)?;
    Ok(policy.grid.points())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationQuota {
    pub per_class: Vec<usize>,
    pub max_attempt_factor: usize,
}

impl GenerationQuota {
    pub fn new(per_class: Vec<usize>, max_attempt_factor: usize) -> Result<Self> {
        let q = Self {
            per_class,
            max_attempt_factor,
        };
        q.validate()?;
        Ok(q)
    }

    /// Same per-class cardinality as `real`.
    pub fn matching(real: &Dataset<impl Real>) -> Self {
        Self {
            per_class: real.class_counts(),
            max_attempt_factor: DEFAULT_MAX_ATTEMPT_FACTOR,
        }
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(config_err("quota must request at least one sample"));
        }
        if self.max_attempt_factor == 0 {
            return Err(config_err("max_attempt_factor must be positive"));
        }
        Ok(())
    }
}

/// Whether `oracle` predicts `label` for `features` with confidence `>= t`.
pub fn passes_filter<T: Real>(
    features: &[T],
    label: usize,
    oracle: &dyn ProbabilisticClassifier<T>,
    threshold: T,
) -> bool {
    accepts(&oracle.predict_proba(features), label, threshold)
}

#[inline]
fn accepts<T: Real>(proba: &[T], label: usize, threshold: T) -> bool {
    argmax(proba) == label && proba[label] >= threshold
}

/// One generator and the hyperparameters it is sampled with.
#[derive(Clone, Copy)]
pub struct SamplingMember<'a, T> {
    pub generator: &'a dyn ConditionalGenerator<T>,
    pub stddev: T,
    pub threshold: Option<T>,
}

/// Filtered samples per quota, from a single generator.
pub fn generate_filtered<T: Real>(
    generator: &dyn ConditionalGenerator<T>,
    oracle: &dyn ProbabilisticClassifier<T>,
    policy: &FilterPolicy,
    quota: &GenerationQuota,
    stddev: T,
    seed: u64,
) -> Result<Dataset<T>> {
    policy.validate()?;
    let member = SamplingMember {
        generator,
        stddev,
        threshold: policy.threshold.map(T::lit),
    };
    generate_from_members(&[member], oracle, quota, seed, 0, None)
}

/// Rejection sampling over an ensemble.
///
/// Every candidate is first assigned uniformly to one member, drawn from it
/// and judged with that member's threshold. With a single member the
/// assignment stream is never consulted. When `provenance` is given it
/// receives the member index of every retained sample, in output order.
pub fn generate_from_members<T: Real>(
    members: &[SamplingMember<'_, T>],
    oracle: &dyn ProbabilisticClassifier<T>,
    quota: &GenerationQuota,
    seed: u64,
    assignment_seed: u64,
    mut provenance: Option<&mut Vec<usize>>,
) -> Result<Dataset<T>> {
    quota.validate()?;
    let first = members
        .first()
        .ok_or_else(|| config_err("at least one generator is required"))?;
    let (num_classes, dim) = (first.generator.num_classes(), first.generator.feature_dim());
    if members
        .iter()
        .any(|m| m.generator.num_classes() != num_classes || m.generator.feature_dim() != dim)
    {
        return Err(config_err("ensemble members disagree on classes or feature width"));
    }
    if quota.per_class.len() != num_classes {
        return Err(config_err(format!(
            "quota lists {} classes, generator has {num_classes}",
            quota.per_class.len()
        )));
    }
    if oracle.num_classes() != num_classes {
        return Err(config_err("oracle and generator disagree on the number of classes"));
    }
    if let Some(p) = provenance.as_deref_mut() {
        p.clear();
    }

    let k = members.len();
    let mut dataset = Dataset::empty(num_classes, dim);
    for (class, &want) in quota.per_class.iter().enumerate() {
        if want == 0 {
            continue;
        }
        let batch = want.max(MIN_BATCH);
        let budget = want.saturating_mul(quota.max_attempt_factor);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        let mut round = 0u64;
        while accepted < want {
            if attempts >= budget {
                let threshold = members
                    .iter()
                    .filter_map(|m| m.threshold)
                    .fold(f64::NEG_INFINITY, |a, t| a.max(t.as_f64()));
                return Err(Error::Starvation {
                    class,
                    accepted,
                    attempts,
                    rate: accepted as f64 / attempts.max(1) as f64,
                    threshold: if threshold.is_finite() { threshold } else { 0.0 },
                });
            }
            let tag = [class as u64, round];
            let assignment: Vec<usize> = if k == 1 {
                vec![0; batch]
            } else {
                let mut rng = rng_from(derive_seed(seed, "assign", &[assignment_seed, tag[0], tag[1]]));
                (0..batch).map(|_| rng.random_range(0..k)).collect()
            };
            let mut counts = vec![0usize; k];
            for &m in &assignment {
                counts[m] += 1;
            }
            let mut drawn: Vec<std::vec::IntoIter<Vec<T>>> = Vec::with_capacity(k);
            for (m, member) in members.iter().enumerate() {
                let s = derive_seed(seed, "draw", &[class as u64, round, m as u64]);
                let xs = member.generator.sample(class, counts[m], member.stddev, s)?;
                if xs.len() != counts[m] || xs.iter().any(|x| x.len() != dim) {
                    return Err(Error::Usage("generator returned samples of the wrong shape".into()));
                }
                drawn.push(xs.into_iter());
            }
            let candidates: Vec<(usize, Vec<T>)> = assignment
                .iter()
                .map(|&m| (m, drawn[m].next().expect("counted")))
                .collect();

            let needs_oracle = members.iter().any(|m| m.threshold.is_some());
            let proba = needs_oracle.then(|| {
                let rows: Vec<&[T]> = candidates.iter().map(|(_, x)| x.as_slice()).collect();
                oracle.predict_proba_batch(&Matrix::from_rows(&rows, dim))
            });
            for (i, (m, x)) in candidates.into_iter().enumerate() {
                attempts += 1;
                let keep = match (members[m].threshold, &proba) {
                    (Some(t), Some(p)) => accepts(p.row(i), class, t),
                    _ => true,
                };
                if keep {
                    dataset.push(LabeledSample::new(x, class))?;
                    if let Some(p) = provenance.as_deref_mut() {
                        p.push(m);
                    }
                    accepted += 1;
                    if accepted == want {
                        break;
                    }
                }
            }
            round += 1;
        }
    }
    Ok(dataset)
}
