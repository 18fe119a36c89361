//! Finite-difference and moment oracles shared by the numerical tests and
//! the acceptance run. Losses are coded here with plain loops.

use gafi::data::{Dataset, LabeledSample};
use gafi::linalg::Matrix;
use gafi::models::classifier::loss_and_grad;
use gafi::models::gan::{discriminator_loss_and_grad, discriminator_shapes, generator_loss_and_grad, generator_shapes};
use gafi::models::gmm::mixtures;
use gafi::models::{fit_gmm_generator, sample_latent, Classifier, ClassifierKind, GeneratorCheckpoint, NoiseSource, ProbabilisticClassifier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn dense(x: &[f64], w: &Matrix<f64>, b: &Matrix<f64>) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b[(0, j)] + (0..w.rows()).map(|i| x[i] * w[(i, j)]).sum::<f64>())
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[y]
}

fn classifier_loss(kind: ClassifierKind, p: &[Matrix<f64>], x: &Matrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logits = match kind {
            ClassifierKind::Softmax => dense(x.row(r), &p[0], &p[1]),
            ClassifierKind::Mlp { .. } => {
                let h: Vec<f64> = dense(x.row(r), &p[0], &p[1]).into_iter().map(f64::tanh).collect();
                dense(&h, &p[2], &p[3])
            }
        };
        total += cross_entropy(&logits, y);
    }
    total / labels.len() as f64
}

fn with_label(x: &[f64], label: usize, classes: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    v.extend((0..classes).map(|c| if c == label { 1.0 } else { 0.0 }));
    v
}

fn disc_logit(d: &[Matrix<f64>], x: &[f64], label: usize, classes: usize) -> f64 {
    let h: Vec<f64> = dense(&with_label(x, label, classes), &d[0], &d[1])
        .into_iter()
        .map(|v| if v > 0.0 { v } else { 0.2 * v })
        .collect();
    dense(&h, &d[2], &d[3])[0]
}

fn gen_out(g: &[Matrix<f64>], z: &[f64], label: usize, classes: usize) -> Vec<f64> {
    let h: Vec<f64> = dense(&with_label(z, label, classes), &g[0], &g[1])
        .into_iter()
        .map(f64::tanh)
        .collect();
    dense(&h, &g[2], &g[3])
}

/// Central differences of `f` with respect to every entry of every matrix.
fn numeric_grad(params: &[Matrix<f64>], f: impl Fn(&[Matrix<f64>]) -> f64) -> Vec<Matrix<f64>> {
    let mut work = params.to_vec();
    let mut out = Vec::new();
    for k in 0..params.len() {
        let mut g = Matrix::zeros(params[k].rows(), params[k].cols());
        for i in 0..params[k].as_slice().len() {
            let orig = work[k].as_slice()[i];
            work[k].as_mut_slice()[i] = orig + H;
            let up = f(&work);
            work[k].as_mut_slice()[i] = orig - H;
            let down = f(&work);
            work[k].as_mut_slice()[i] = orig;
            g.as_mut_slice()[i] = (up - down) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

fn relative_error(a: &[Matrix<f64>], b: &[Matrix<f64>]) -> f64 {
    let flat = |m: &[Matrix<f64>]| m.iter().flat_map(|x| x.as_slice().to_vec()).collect::<Vec<_>>();
    let (a, b) = (flat(a), flat(b));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(&a).max(norm(&b)).max(1e-12)
}


/// Worst relative error and worst loss-value mismatch over a batch of random instances.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub instances: usize,
    pub worst_relative: f64,
    pub worst_value: f64,
}

impl GradCheck {
    fn record(&mut self, relative: f64, value: f64, reference: f64) {
        self.instances += 1;
        self.worst_relative = self.worst_relative.max(relative);
        self.worst_value = self.worst_value.max((value - reference).abs() / (1.0 + reference.abs()));
    }
}

pub fn check_classifier_gradients(instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for instance in 0..instances {
        let classes = rng.random_range(2..6);
        let dim = rng.random_range(1..5);
        let batch = rng.random_range(1..9);
        let kind = if instance % 2 == 0 {
            ClassifierKind::Softmax
        } else {
            ClassifierKind::Mlp {
                hidden: rng.random_range(1..7),
            }
        };
        let params: Vec<Matrix<f64>> = kind
            .param_shapes(classes, dim)
            .into_iter()
            .map(|(r, c)| randn(&mut rng, r, c, 0.7))
            .collect();
        let x = randn(&mut rng, batch, dim, 1.0);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

        let (value, analytic) = loss_and_grad(kind, &params, &x, &labels);
        let numeric = numeric_grad(&params, |p| classifier_loss(kind, p, &x, &labels));
        out.record(relative_error(&analytic, &numeric), value, classifier_loss(kind, &params, &x, &labels));
    }
    out
}

pub fn check_discriminator_gradients(instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for _ in 0..instances {
        let classes = rng.random_range(2..5);
        let dim = rng.random_range(1..4);
        let hidden = rng.random_range(2..7);
        let (nr, nf) = (rng.random_range(1..7), rng.random_range(1..7));
        let d: Vec<Matrix<f64>> = discriminator_shapes(classes, dim, hidden)
            .into_iter()
            .map(|(r, c)| randn(&mut rng, r, c, 0.8))
            .collect();
        let real = randn(&mut rng, nr, dim, 1.0);
        let fake = randn(&mut rng, nf, dim, 1.0);
        let rl: Vec<usize> = (0..nr).map(|_| rng.random_range(0..classes)).collect();
        let fl: Vec<usize> = (0..nf).map(|_| rng.random_range(0..classes)).collect();

        let loss = |p: &[Matrix<f64>]| {
            let lr: f64 = (0..nr).map(|i| softplus(-disc_logit(p, real.row(i), rl[i], classes))).sum::<f64>() / nr as f64;
            let lf: f64 = (0..nf).map(|i| softplus(disc_logit(p, fake.row(i), fl[i], classes))).sum::<f64>() / nf as f64;
            lr + lf
        };
        let (value, analytic) = discriminator_loss_and_grad(&d, &real, &rl, &fake, &fl, classes);
        out.record(relative_error(&analytic, &numeric_grad(&d, loss)), value, loss(&d));
    }
    out
}

pub fn check_generator_gradients(instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for _ in 0..instances {
        let classes = rng.random_range(2..5);
        let dim = rng.random_range(1..4);
        let latent = rng.random_range(1..4);
        let hidden = rng.random_range(2..7);
        let n = rng.random_range(1..7);
        let g: Vec<Matrix<f64>> = generator_shapes(classes, dim, latent, hidden)
            .into_iter()
            .map(|(r, c)| randn(&mut rng, r, c, 0.8))
            .collect();
        let d: Vec<Matrix<f64>> = discriminator_shapes(classes, dim, hidden)
            .into_iter()
            .map(|(r, c)| randn(&mut rng, r, c, 0.8))
            .collect();
        let z = randn(&mut rng, n, latent, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();

        let loss = |p: &[Matrix<f64>]| {
            (0..n)
                .map(|i| {
                    let x = gen_out(p, z.row(i), labels[i], classes);
                    softplus(-disc_logit(&d, &x, labels[i], classes))
                })
                .sum::<f64>()
                / n as f64
        };
        let (value, analytic) = generator_loss_and_grad(&g, &d, &z, &labels, classes);
        out.record(relative_error(&analytic, &numeric_grad(&g, loss)), value, loss(&g));
    }
    out
}

/// Mixture log-likelihood in the plane with the 2x2 inverse written out.
pub fn log_likelihood_2d(weights: &[f64], means: &[[f64; 2]], covs: &[[f64; 4]], points: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for p in points {
        let mut density = 0.0;
        for k in 0..weights.len() {
            let [a, b, c, d] = covs[k];
            let det = a * d - b * c;
            let (dx, dy) = (p[0] - means[k][0], p[1] - means[k][1]);
            let maha = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det;
            density += weights[k] * (-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        }
        total += density.ln();
    }
    total / points.len() as f64
}

pub fn class_ll(ckpt: &GeneratorCheckpoint<f64>, class: usize, points: &[[f64; 2]]) -> f64 {
    let m = &mixtures(ckpt).unwrap()[class];
    let means: Vec<[f64; 2]> = m.means.iter().map(|v| [v[0], v[1]]).collect();
    let covs: Vec<[f64; 4]> = m
        .covariances
        .iter()
        .map(|c| [c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]])
        .collect();
    log_likelihood_2d(&m.weights, &means, &covs, points)
}

/// One or two classes, each a union of sheared uniform blobs in the plane.
pub fn random_dataset(seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(1..3);
    let mut samples = Vec::new();
    for label in 0..classes {
        let blobs = rng.random_range(2..4);
        for _ in 0..blobs {
            let center = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let (sx, sy) = (rng.random_range(0.2..1.2), rng.random_range(0.2..1.2));
            for _ in 0..rng.random_range(30..90) {
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                samples.push(LabeledSample::new(vec![center[0] + sx * (u + 0.5 * v), center[1] + sy * v], label));
            }
        }
    }
    Dataset::new(classes, 2, samples).unwrap()
}

/// EM on `datasets` random datasets for `iterations` steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmCheck {
    /// Largest drop of the per-class mean log-likelihood between consecutive iterations.
    pub worst_decrease: f64,
    /// Largest disagreement between the independent likelihood and the library's.
    pub worst_disagreement: f64,
}

pub fn check_em_monotone(datasets: u64, iterations: usize) -> EmCheck {
    let mut out = EmCheck::default();
    for seed in 0..datasets {
        let data = random_dataset(seed);
        let k = 2 + (seed as usize % 2);
        let ckpts = fit_gmm_generator(&data, k, iterations, seed).unwrap();
        assert_eq!(ckpts.len(), iterations + 1);
        for class in 0..data.num_classes() {
            let points: Vec<[f64; 2]> = data
                .iter()
                .filter(|s| s.label == class)
                .map(|s| [s.features[0], s.features[1]])
                .collect();
            let slices: Vec<&[f64]> = data.iter().filter(|s| s.label == class).map(|s| s.features.as_slice()).collect();
            let mut prev = f64::NEG_INFINITY;
            for ckpt in &ckpts {
                let ll = class_ll(ckpt, class, &points);
                let lib = mixtures(ckpt).unwrap()[class].mean_log_likelihood(&slices).unwrap();
                out.worst_disagreement = out.worst_disagreement.max((ll - lib).abs() / (1.0 + ll.abs()));
                out.worst_decrease = out.worst_decrease.max(prev - ll);
                prev = ll;
            }
        }
    }
    out
}

/// Largest `|sum(p) - 1|` over random inputs to randomly initialized classifiers.
pub fn worst_probability_row_sum(models: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for m in 0..models {
        let classes = rng.random_range(2..12);
        let dim = rng.random_range(1..6);
        let kind = if m % 2 == 0 {
            ClassifierKind::Softmax
        } else {
            ClassifierKind::Mlp { hidden: 8 }
        };
        let model = Classifier::<f64>::init(kind, classes, dim, rng.random());
        for _ in 0..50 {
            let scale = rng.random_range(0.1..100.0);
            let x: Vec<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let p = model.predict_proba(&x);
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Relative error of the empirical stddev of `n` latent draws at noise level `s`.
pub fn latent_stddev_error(s: f64, n: usize, seed: u64) -> f64 {
    let z = sample_latent(NoiseSource::new(1, s).unwrap(), n, seed);
    let xs = z.as_slice();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var.sqrt() - s).abs() / s
}
