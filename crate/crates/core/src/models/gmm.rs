//! Class-conditional Gaussian mixture generator fitted by EM.
//!
//! Each class gets its own full-covariance mixture. A checkpoint is stored
//! after initialization and after every EM iteration, so iterations play the
//! role of training epochs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sample_latent, GeneratorCheckpoint, ModelKind, NoiseSource};
use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::linalg::{forward_substitute, Matrix};
use crate::scalar::{log_sum_exp, Real};
use crate::seed::{derive_seed, rng_from};

/// Ridge added to every covariance before factorization.
pub const COVARIANCE_REGULARIZER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub components_per_class: usize,
    pub em_iterations: usize,
}

/// One class's mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub covariances: Vec<Matrix<T>>,
}

impl<T: Real> ClassMixture<T> {
    fn components(&self) -> usize {
        self.weights.len()
    }

    fn factors(&self) -> Result<Vec<Matrix<T>>> {
        self.covariances
            .iter()
            .map(|c| {
                c.cholesky()
                    .ok_or_else(|| Error::Training { epoch: 0, message: "covariance is not positive definite".into() })
            })
            .collect()
    }

    /// Per-component log weight + log density for one point.
    fn component_log_terms(&self, factors: &[Matrix<T>], x: &[T], out: &mut [T]) {
        let d = x.len();
        let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        let half = T::lit(0.5);
        let mut y = vec![T::zero(); d];
        for k in 0..self.components() {
            let l = &factors[k];
            for (yi, (xi, mi)) in y.iter_mut().zip(x.iter().zip(&self.means[k])) {
                *yi = *xi - *mi;
            }
            forward_substitute(l, &mut y);
            let maha: T = y.iter().map(|v| *v * *v).sum();
            let log_det: T = (0..d).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0);
            let log_density = -half * (T::from_usize(d).unwrap() * log_2pi + log_det + maha);
            out[k] = self.weights[k].ln() + log_density;
        }
    }

    /// Mean per-sample log-likelihood of `points`.
    pub fn mean_log_likelihood(&self, points: &[&[T]]) -> Result<T> {
        let factors = self.factors()?;
        let mut terms = vec![T::zero(); self.components()];
        let mut total = T::zero();
        for x in points {
            self.component_log_terms(&factors, x, &mut terms);
            total += log_sum_exp(&terms);
        }
        Ok(total / T::from_usize(points.len().max(1)).unwrap())
    }
}

pub(crate) fn block_lengths(num_classes: usize, d: usize, k: usize) -> Vec<usize> {
    (0..num_classes).flat_map(|_| [k, k * d, k * d * d]).collect()
}

/// Unpacks per-class mixtures from a GMM checkpoint.
pub fn mixtures<T: Real>(ckpt: &GeneratorCheckpoint<T>) -> Result<Vec<ClassMixture<T>>> {
    if ckpt.kind != ModelKind::Gmm {
        return Err(Error::Usage(format!("expected a gmm checkpoint, got {:?}", ckpt.kind)));
    }
    let (d, k) = (ckpt.feature_dim, ckpt.arch);
    Ok(ckpt
        .blocks
        .chunks_exact(3)
        .map(|b| ClassMixture {
            weights: b[0].clone(),
            means: b[1].chunks_exact(d).map(<[T]>::to_vec).collect(),
            covariances: b[2]
                .chunks_exact(d * d)
                .map(|c| Matrix::from_vec(d, d, c.to_vec()))
                .collect(),
        })
        .take(ckpt.num_classes)
        .inspect(|m| debug_assert_eq!(m.components(), k))
        .collect())
}

fn to_checkpoint<T: Real>(
    epoch: usize,
    mixtures: &[ClassMixture<T>],
    feature_dim: usize,
    components: usize,
) -> GeneratorCheckpoint<T> {
    let mut blocks = Vec::with_capacity(mixtures.len() * 3);
    for m in mixtures {
        blocks.push(m.weights.clone());
        blocks.push(m.means.concat());
        blocks.push(m.covariances.iter().flat_map(|c| c.as_slice().to_vec()).collect());
    }
    GeneratorCheckpoint {
        epoch,
        kind: ModelKind::Gmm,
        num_classes: mixtures.len(),
        feature_dim,
        latent_dim: feature_dim,
        arch: components,
        blocks,
    }
}

/// Fits one mixture per class and returns `em_iterations + 1` checkpoints;
/// index 0 holds the initialization.
pub fn fit_gmm_generator<T: Real>(
    train: &Dataset<T>,
    components_per_class: usize,
    em_iterations: usize,
    seed: u64,
) -> Result<Vec<GeneratorCheckpoint<T>>> {
    if components_per_class == 0 {
        return Err(config_err("gmm: components_per_class must be positive"));
    }
    let d = train.feature_dim();
    let mut per_class_history = Vec::with_capacity(train.num_classes());
    for (class, idx) in train.indices_by_class().iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::Training {
                epoch: 0,
                message: format!("gmm: class {class} has no training samples"),
            });
        }
        if idx.len() < components_per_class {
            return Err(Error::Training {
                epoch: 0,
                message: format!(
                    "gmm: class {class} has {} samples, fewer than {components_per_class} components",
                    idx.len()
                ),
            });
        }
        let points: Vec<&[T]> = idx.iter().map(|&i| train.samples()[i].features.as_slice()).collect();
        let mut rng = rng_from(derive_seed(seed, "gmm-init", &[class as u64]));
        let mut mixture = initialize(&points, components_per_class, &mut rng);
        let mut history = Vec::with_capacity(em_iterations + 1);
        history.push(mixture.clone());
        for iteration in 1..=em_iterations {
            mixture = em_step(&mixture, &points).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    epoch: iteration,
                    message: format!("gmm class {class}: {message}"),
                },
                other => other,
            })?;
            history.push(mixture.clone());
        }
        per_class_history.push(history);
    }
    Ok((0..=em_iterations)
        .map(|epoch| {
            let snapshot: Vec<_> = per_class_history.iter().map(|h| h[epoch].clone()).collect();
            to_checkpoint(epoch, &snapshot, d, components_per_class)
        })
        .collect())
}

fn regularize<T: Real>(cov: &mut Matrix<T>) {
    let eps = T::lit(COVARIANCE_REGULARIZER);
    for i in 0..cov.rows() {
        cov[(i, i)] += eps;
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// k-means++ seeded means, shared class covariance, uniform weights.
fn initialize<T: Real>(points: &[&[T]], k: usize, rng: &mut crate::seed::Rng) -> ClassMixture<T> {
    let n = points.len();
    let d = points[0].len();
    let mut means: Vec<Vec<T>> = vec![points[rng.random_range(0..n)].to_vec()];
    let mut nearest: Vec<T> = points.iter().map(|p| sq_dist(p, &means[0])).collect();
    while means.len() < k {
        let total: T = nearest.iter().copied().sum();
        let pick = if total > T::zero() {
            let mut target = T::lit(rng.random::<f64>()) * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let center = points[pick].to_vec();
        for (best, p) in nearest.iter_mut().zip(points) {
            *best = best.min(sq_dist(p, &center));
        }
        means.push(center);
    }

    let nf = T::from_usize(n).unwrap();
    let mut mean = vec![T::zero(); d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += *x;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut cov = Matrix::zeros(d, d);
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    let mut cov = cov.scale(T::one() / nf);
    regularize(&mut cov);
    ClassMixture {
        weights: vec![T::one() / T::from_usize(k).unwrap(); k],
        means,
        covariances: vec![cov; k],
    }
}

fn em_step<T: Real>(current: &ClassMixture<T>, points: &[&[T]]) -> Result<ClassMixture<T>> {
    let k = current.components();
    let d = points[0].len();
    let n = points.len();
    let factors = current.factors()?;

    // E-step
    let mut resp = Matrix::zeros(n, k);
    let mut terms = vec![T::zero(); k];
    for (i, x) in points.iter().enumerate() {
        current.component_log_terms(&factors, x, &mut terms);
        let norm = log_sum_exp(&terms);
        for (r, t) in resp.row_mut(i).iter_mut().zip(&terms) {
            *r = (*t - norm).exp();
        }
    }

    // M-step
    let mut next = current.clone();
    let nf = T::from_usize(n).unwrap();
    for c in 0..k {
        let mass: T = (0..n).map(|i| resp[(i, c)]).sum();
        if !(mass > T::lit(1e-12)) {
            next.weights[c] = T::zero();
            continue;
        }
        let mut mean = vec![T::zero(); d];
        for (i, x) in points.iter().enumerate() {
            let r = resp[(i, c)];
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += r * *v;
            }
        }
        for m in &mut mean {
            *m /= mass;
        }
        let mut cov = Matrix::zeros(d, d);
        for (i, x) in points.iter().enumerate() {
            let r = resp[(i, c)];
            for a in 0..d {
                let da = r * (x[a] - mean[a]);
                for b in 0..d {
                    cov[(a, b)] += da * (x[b] - mean[b]);
                }
            }
        }
        let mut cov = cov.scale(T::one() / mass);
        regularize(&mut cov);
        next.weights[c] = mass / nf;
        next.means[c] = mean;
        next.covariances[c] = cov;
    }
    Ok(next)
}

/// Draws `count` samples of `class`: a component is picked by weight, then
/// `mean + stddev · L · z` with `L` the covariance Cholesky factor and `z`
/// standard normal.
pub fn gmm_sample<T: Real>(
    ckpt: &GeneratorCheckpoint<T>,
    class: usize,
    count: usize,
    stddev: T,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if class >= ckpt.num_classes {
        return Err(Error::Usage(format!(
            "class {class} out of range for {} classes",
            ckpt.num_classes
        )));
    }
    let mixture = mixtures(ckpt)?.swap_remove(class);
    let factors = mixture.factors()?;
    let d = ckpt.feature_dim;
    let mut rng = rng_from(derive_seed(seed, "gmm-component", &[]));
    let z = sample_latent(NoiseSource::standard(d), count, derive_seed(seed, "gmm-latent", &[]));
    let mut out = Vec::with_capacity(count);
    for r in 0..count {
        let k = pick_component(&mixture.weights, rng.random::<f64>());
        let l = &factors[k];
        let zr = z.row(r);
        let x = (0..d)
            .map(|i| {
                let offset: T = (0..=i).map(|j| l[(i, j)] * zr[j]).sum();
                mixture.means[k][i] + stddev * offset
            })
            .collect();
        out.push(x);
    }
    Ok(out)
}

fn pick_component<T: Real>(weights: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    for (k, w) in weights.iter().enumerate() {
        acc += w.as_f64() / total;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|w| *w > T::zero()).unwrap_or(0)
}
