//! Tiny conditional GAN on low-dimensional feature vectors.
//!
//! Generator: `[z, onehot(c)] → tanh(hidden) → linear(feature_dim)`.
//! Discriminator: `[x, onehot(c)] → leaky_relu(hidden, 0.2) → logit`.
//! Both are trained with Adam on the non-saturating GAN loss; gradients come
//! from [`crate::autodiff`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{sample_latent, GeneratorCheckpoint, ModelKind, NoiseSource};
use crate::autodiff::{softplus, Graph, Var};
use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::seed::{derive_seed, rng_from, standard_normal};

pub const DISCRIMINATOR_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
}

mod defaults {
    pub fn batch_size() -> usize {
        64
    }
    pub fn learning_rate() -> f64 {
        2e-3
    }
    pub fn beta1() -> f64 {
        0.5
    }
    pub fn beta2() -> f64 {
        0.999
    }
}

impl GanConfig {
    pub fn new(latent_dim: usize, hidden_width: usize, epochs: usize) -> Self {
        Self {
            latent_dim,
            hidden_width,
            epochs,
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("gan: latent_dim, hidden_width, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err("gan: learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch diagnostics; index 0 is measured before any update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanTrace {
    /// Mean `−ln D(x)` over the real training set.
    pub discriminator_real_loss: Vec<f64>,
}

pub(crate) fn block_lengths(num_classes: usize, d: usize, latent: usize, hidden: usize) -> Vec<usize> {
    vec![(latent + num_classes) * hidden, hidden, hidden * d, d]
}

pub fn generator_shapes(num_classes: usize, d: usize, latent: usize, hidden: usize) -> Vec<(usize, usize)> {
    vec![(latent + num_classes, hidden), (1, hidden), (hidden, d), (1, d)]
}

pub fn discriminator_shapes(num_classes: usize, d: usize, hidden: usize) -> Vec<(usize, usize)> {
    vec![(d + num_classes, hidden), (1, hidden), (hidden, 1), (1, 1)]
}

pub fn one_hot<T: Real>(labels: &[usize], num_classes: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (r, &c) in labels.iter().enumerate() {
        m[(r, c)] = T::one();
    }
    m
}

fn hcat<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(a.rows(), a.cols() + b.cols(), |r, c| {
        if c < a.cols() {
            a[(r, c)]
        } else {
            b[(r, c - a.cols())]
        }
    })
}

fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = x.matmul(w);
    for r in 0..out.rows() {
        for (v, &bi) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
            *v += bi;
        }
    }
    out
}

/// Generator output for latent rows `z` conditioned on `labels`.
pub fn generator_forward<T: Real>(g: &[Matrix<T>], z: &Matrix<T>, labels: &[usize], num_classes: usize) -> Matrix<T> {
    let input = hcat(z, &one_hot(labels, num_classes));
    let h = affine(&input, &g[0], &g[1]).map(|v| v.tanh());
    affine(&h, &g[2], &g[3])
}

/// Discriminator logits for rows `x` conditioned on `labels`.
pub fn discriminator_forward<T: Real>(d: &[Matrix<T>], x: &Matrix<T>, labels: &[usize], num_classes: usize) -> Matrix<T> {
    let slope = T::lit(DISCRIMINATOR_SLOPE);
    let input = hcat(x, &one_hot(labels, num_classes));
    let h = affine(&input, &d[0], &d[1]).map(|v| if v > T::zero() { v } else { slope * v });
    affine(&h, &d[2], &d[3])
}

fn mean_bce<T: Real>(logits: &Matrix<T>, target: T) -> T {
    let n = T::from_usize(logits.rows().max(1)).unwrap();
    logits.as_slice().iter().map(|&l| softplus(l) - target * l).sum::<T>() / n
}

/// `BCE(D(real), 1) + BCE(D(fake), 0)`, forward only.
pub fn discriminator_loss<T: Real>(
    d: &[Matrix<T>],
    real: &Matrix<T>,
    real_labels: &[usize],
    fake: &Matrix<T>,
    fake_labels: &[usize],
    num_classes: usize,
) -> T {
    mean_bce(&discriminator_forward(d, real, real_labels, num_classes), T::one())
        + mean_bce(&discriminator_forward(d, fake, fake_labels, num_classes), T::zero())
}

/// Non-saturating generator loss `BCE(D(G(z)), 1)`, forward only.
pub fn generator_loss<T: Real>(
    g: &[Matrix<T>],
    d: &[Matrix<T>],
    z: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
) -> T {
    let fake = generator_forward(g, z, labels, num_classes);
    mean_bce(&discriminator_forward(d, &fake, labels, num_classes), T::one())
}

fn build_generator<T: Real>(graph: &mut Graph<T>, g: &[Var], z: Var, onehot: Var) -> Var {
    let input = graph.concat_cols(z, onehot);
    let h = graph.affine(input, g[0], g[1]);
    let h = graph.tanh(h);
    graph.affine(h, g[2], g[3])
}

fn build_discriminator<T: Real>(graph: &mut Graph<T>, d: &[Var], x: Var, onehot: Var) -> Var {
    let input = graph.concat_cols(x, onehot);
    let h = graph.affine(input, d[0], d[1]);
    let h = graph.leaky_relu(h, T::lit(DISCRIMINATOR_SLOPE));
    graph.affine(h, d[2], d[3])
}

fn leaves<T: Real>(graph: &mut Graph<T>, params: &[Matrix<T>]) -> Vec<Var> {
    params.iter().map(|p| graph.leaf(p.clone())).collect()
}

/// Discriminator loss and its gradient with respect to the discriminator.
pub fn discriminator_loss_and_grad<T: Real>(
    d: &[Matrix<T>],
    real: &Matrix<T>,
    real_labels: &[usize],
    fake: &Matrix<T>,
    fake_labels: &[usize],
    num_classes: usize,
) -> (T, Vec<Matrix<T>>) {
    let mut graph = Graph::new();
    let dv = leaves(&mut graph, d);
    let xr = graph.leaf(real.clone());
    let yr = graph.leaf(one_hot(real_labels, num_classes));
    let xf = graph.leaf(fake.clone());
    let yf = graph.leaf(one_hot(fake_labels, num_classes));
    let lr = build_discriminator(&mut graph, &dv, xr, yr);
    let lf = build_discriminator(&mut graph, &dv, xf, yf);
    let ones = vec![T::one(); real.rows()];
    let zeros = vec![T::zero(); fake.rows()];
    let loss_real = graph.bce_with_logits(lr, &ones);
    let loss_fake = graph.bce_with_logits(lf, &zeros);
    let loss = graph.add(loss_real, loss_fake);
    let value = graph.scalar(loss);
    let mut grads = graph.backward(loss);
    let out = dv.iter().zip(d).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();
    (value, out)
}

/// Generator loss and its gradient with respect to the generator; the
/// discriminator is held fixed.
pub fn generator_loss_and_grad<T: Real>(
    g: &[Matrix<T>],
    d: &[Matrix<T>],
    z: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
) -> (T, Vec<Matrix<T>>) {
    let mut graph = Graph::new();
    let gv = leaves(&mut graph, g);
    let dv = leaves(&mut graph, d);
    let zv = graph.leaf(z.clone());
    let yv = graph.leaf(one_hot(labels, num_classes));
    let fake = build_generator(&mut graph, &gv, zv, yv);
    let logits = build_discriminator(&mut graph, &dv, fake, yv);
    let loss = graph.bce_with_logits(logits, &vec![T::one(); z.rows()]);
    let value = graph.scalar(loss);
    let mut grads = graph.backward(loss);
    let out = gv.iter().zip(g).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();
    (value, out)
}

fn init_params<T: Real>(shapes: &[(usize, usize)], rng: &mut crate::seed::Rng) -> Vec<Matrix<T>> {
    shapes
        .iter()
        .map(|&(r, c)| {
            if r == 1 {
                Matrix::zeros(r, c)
            } else {
                let std = T::lit((2.0 / (r + c) as f64).sqrt());
                Matrix::from_fn(r, c, |_, _| std * standard_normal::<T>(rng))
            }
        })
        .collect()
}

fn snapshot<T: Real>(epoch: usize, g: &[Matrix<T>], num_classes: usize, d: usize, cfg: &GanConfig) -> GeneratorCheckpoint<T> {
    GeneratorCheckpoint {
        epoch,
        kind: ModelKind::TinyGan,
        num_classes,
        feature_dim: d,
        latent_dim: cfg.latent_dim,
        arch: cfg.hidden_width,
        blocks: g.iter().map(|m| m.as_slice().to_vec()).collect(),
    }
}

fn real_loss<T: Real>(d: &[Matrix<T>], train: &Dataset<T>) -> f64 {
    let all: Vec<usize> = (0..train.len()).collect();
    let x = train.feature_matrix(&all);
    mean_bce(&discriminator_forward(d, &x, &train.labels(), train.num_classes()), T::one()).as_f64()
}

/// Trains the GAN with default optimizer settings; one checkpoint per epoch
/// plus the initialization.
pub fn fit_tiny_gan<T: Real>(
    train: &Dataset<T>,
    latent_dim: usize,
    hidden_width: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<GeneratorCheckpoint<T>>> {
    fit_tiny_gan_with(train, &GanConfig::new(latent_dim, hidden_width, epochs), seed).map(|(c, _)| c)
}

pub fn fit_tiny_gan_with<T: Real>(
    train: &Dataset<T>,
    cfg: &GanConfig,
    seed: u64,
) -> Result<(Vec<GeneratorCheckpoint<T>>, GanTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(config_err("gan: empty training set"));
    }
    let (c, d) = (train.num_classes(), train.feature_dim());
    let mut init_rng = rng_from(derive_seed(seed, "gan-init", &[]));
    let mut g = init_params::<T>(&generator_shapes(c, d, cfg.latent_dim, cfg.hidden_width), &mut init_rng);
    let mut disc = init_params::<T>(&discriminator_shapes(c, d, cfg.hidden_width), &mut init_rng);
    let mut g_opt = Adam::new(&g, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut d_opt = Adam::new(&disc, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut shuffle = rng_from(derive_seed(seed, "gan-shuffle", &[]));

    let mut checkpoints = vec![snapshot(0, &g, c, d, cfg)];
    let mut trace = GanTrace {
        discriminator_real_loss: vec![real_loss(&disc, train)],
    };
    let noise = NoiseSource::standard(cfg.latent_dim);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let real = train.feature_matrix(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.samples()[i].label).collect();
            let step = [epoch as u64, b as u64];
            let z = sample_latent(noise, chunk.len(), derive_seed(seed, "gan-z-d", &step));
            let fake = generator_forward(&g, &z, &labels, c);
            let (d_loss, d_grads) = discriminator_loss_and_grad(&disc, &real, &labels, &fake, &labels, c);
            let z = sample_latent(noise, chunk.len(), derive_seed(seed, "gan-z-g", &step));
            let (g_loss, g_grads) = generator_loss_and_grad(&g, &disc, &z, &labels, c);
            if !d_loss.is_finite() || !g_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("gan losses diverged (d={d_loss}, g={g_loss})"),
                });
            }
            d_opt.step(&mut disc, &d_grads);
            g_opt.step(&mut g, &g_grads);
        }
        checkpoints.push(snapshot(epoch, &g, c, d, cfg));
        trace.discriminator_real_loss.push(real_loss(&disc, train));
    }
    Ok((checkpoints, trace))
}

fn generator_params<T: Real>(ckpt: &GeneratorCheckpoint<T>) -> Vec<Matrix<T>> {
    generator_shapes(ckpt.num_classes, ckpt.feature_dim, ckpt.latent_dim, ckpt.arch)
        .into_iter()
        .zip(&ckpt.blocks)
        .map(|((r, c), b)| Matrix::from_vec(r, c, b.clone()))
        .collect()
}

/// Samples the generator with latent noise of standard deviation `stddev`.
pub fn gan_sample<T: Real>(
    ckpt: &GeneratorCheckpoint<T>,
    class: usize,
    count: usize,
    stddev: T,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if ckpt.kind != ModelKind::TinyGan {
        return Err(Error::Usage(format!("expected a tiny-gan checkpoint, got {:?}", ckpt.kind)));
    }
    if class >= ckpt.num_classes {
        return Err(Error::Usage(format!(
            "class {class} out of range for {} classes",
            ckpt.num_classes
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let z = sample_latent(NoiseSource::new(ckpt.latent_dim, stddev)?, count, seed);
    let out = generator_forward(&generator_params(ckpt), &z, &vec![class; count], ckpt.num_classes);
    Ok(out.iter_rows().map(<[T]>::to_vec).collect())
}
