//! Softmax regression and one-hidden-layer MLP classifiers trained with
//! mini-batch SGD on cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::Sgd;
use super::{ProbabilisticClassifier, TrainingBudget};
use crate::autodiff::{softmax_in_place, softmax_rows, Graph, Var};
use crate::data::Dataset;
use crate::error::{config_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::seed::{derive_seed, rng_from, standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassifierKind {
    Softmax,
    /// One `tanh` hidden layer of the given width.
    Mlp { hidden: usize },
}

impl ClassifierKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierKind::Mlp { hidden: 0 } => Err(config_err("mlp hidden width must be positive")),
            _ => Ok(()),
        }
    }

    /// Shapes of the parameter matrices, in order.
    pub fn param_shapes(&self, num_classes: usize, feature_dim: usize) -> Vec<(usize, usize)> {
        match *self {
            ClassifierKind::Softmax => vec![(feature_dim, num_classes), (1, num_classes)],
            ClassifierKind::Mlp { hidden } => vec![
                (feature_dim, hidden),
                (1, hidden),
                (hidden, num_classes),
                (1, num_classes),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    kind: ClassifierKind,
    num_classes: usize,
    feature_dim: usize,
    params: Vec<Matrix<T>>,
}

impl<T: Real> Classifier<T> {
    /// Glorot-normal weights, zero biases.
    pub fn init(kind: ClassifierKind, num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let params = kind
            .param_shapes(num_classes, feature_dim)
            .into_iter()
            .map(|(r, c)| {
                if r == 1 {
                    Matrix::zeros(r, c)
                } else {
                    let std = T::lit((2.0 / (r + c) as f64).sqrt());
                    Matrix::from_fn(r, c, |_, _| std * standard_normal::<T>(&mut rng))
                }
            })
            .collect();
        Self {
            kind,
            num_classes,
            feature_dim,
            params,
        }
    }

    pub fn from_params(
        kind: ClassifierKind,
        num_classes: usize,
        feature_dim: usize,
        params: Vec<Matrix<T>>,
    ) -> Result<Self> {
        let shapes: Vec<_> = params.iter().map(Matrix::shape).collect();
        if shapes != kind.param_shapes(num_classes, feature_dim) {
            return Err(config_err(format!("parameter shapes {shapes:?} do not match {kind:?}")));
        }
        Ok(Self {
            kind,
            num_classes,
            feature_dim,
            params,
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn params(&self) -> &[Matrix<T>] {
        &self.params
    }

    pub fn logits(&self, features: &Matrix<T>) -> Matrix<T> {
        forward_logits(self.kind, &self.params, features)
    }
}

fn add_bias<T: Real>(m: &mut Matrix<T>, bias: &Matrix<T>) {
    for r in 0..m.rows() {
        for (x, &b) in m.row_mut(r).iter_mut().zip(bias.as_slice()) {
            *x += b;
        }
    }
}

fn forward_logits<T: Real>(kind: ClassifierKind, params: &[Matrix<T>], x: &Matrix<T>) -> Matrix<T> {
    match kind {
        ClassifierKind::Softmax => {
            let mut l = x.matmul(&params[0]);
            add_bias(&mut l, &params[1]);
            l
        }
        ClassifierKind::Mlp { .. } => {
            let mut h = x.matmul(&params[0]);
            add_bias(&mut h, &params[1]);
            let h = h.map(|v| v.tanh());
            let mut l = h.matmul(&params[2]);
            add_bias(&mut l, &params[3]);
            l
        }
    }
}

fn build_logits<T: Real>(g: &mut Graph<T>, kind: ClassifierKind, params: &[Var], x: Var) -> Var {
    match kind {
        ClassifierKind::Softmax => g.affine(x, params[0], params[1]),
        ClassifierKind::Mlp { .. } => {
            let h = g.affine(x, params[0], params[1]);
            let h = g.tanh(h);
            g.affine(h, params[2], params[3])
        }
    }
}

/// Mean cross-entropy of `params` on a batch and its gradient with respect to
/// every parameter matrix.
pub fn loss_and_grad<T: Real>(
    kind: ClassifierKind,
    params: &[Matrix<T>],
    features: &Matrix<T>,
    labels: &[usize],
) -> (T, Vec<Matrix<T>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let x = g.leaf(features.clone());
    let logits = build_logits(&mut g, kind, &vars, x);
    let loss = g.softmax_cross_entropy(logits, labels);
    let value = g.scalar(loss);
    let mut grads = g.backward(loss);
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    (value, grads)
}

/// Mean cross-entropy without gradients.
pub fn loss<T: Real>(kind: ClassifierKind, params: &[Matrix<T>], features: &Matrix<T>, labels: &[usize]) -> T {
    let logits = forward_logits(kind, params, features);
    let mut total = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        total += crate::scalar::log_sum_exp(row) - row[y];
    }
    total / T::from_usize(labels.len().max(1)).unwrap()
}

impl<T: Real> ProbabilisticClassifier<T> for Classifier<T> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, features: &[T]) -> Vec<T> {
        let x = Matrix::from_vec(1, features.len(), features.to_vec());
        let mut row = self.logits(&x).into_vec();
        softmax_in_place(&mut row);
        row
    }

    fn predict_proba_batch(&self, features: &Matrix<T>) -> Matrix<T> {
        softmax_rows(&self.logits(features))
    }
}

/// Epoch-at-a-time SGD driver.
///
/// Keeping the optimizer state outside a single call lets the caller swap the
/// training set between epochs.
#[derive(Debug, Clone)]
pub struct ClassifierTrainer<T> {
    model: Classifier<T>,
    opt: Sgd<T>,
    budget: TrainingBudget,
    shuffle: Rng,
    epoch: usize,
}

impl<T: Real> ClassifierTrainer<T> {
    pub fn new(
        kind: ClassifierKind,
        num_classes: usize,
        feature_dim: usize,
        budget: &TrainingBudget,
        seed: u64,
    ) -> Result<Self> {
        kind.validate()?;
        budget.validate()?;
        let model = Classifier::init(kind, num_classes, feature_dim, derive_seed(seed, "classifier-init", &[]));
        let opt = Sgd::new(&model.params, budget.momentum, budget.weight_decay);
        Ok(Self {
            model,
            opt,
            budget: budget.clone(),
            shuffle: rng_from(derive_seed(seed, "classifier-shuffle", &[])),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.budget.epochs
    }

    pub fn classifier(&self) -> &Classifier<T> {
        &self.model
    }

    pub fn into_classifier(self) -> Classifier<T> {
        self.model
    }

    /// One pass over `data` in a freshly shuffled order; returns the mean
    /// batch loss.
    pub fn train_epoch(&mut self, data: &Dataset<T>) -> Result<T> {
        let epoch = self.epoch;
        if data.is_empty() {
            return Err(Error::Training {
                epoch,
                message: "empty training set".into(),
            });
        }
        if data.feature_dim() != self.model.feature_dim || data.num_classes() != self.model.num_classes {
            return Err(Error::Training {
                epoch,
                message: "training set shape does not match the classifier".into(),
            });
        }
        let lr = T::lit(self.budget.learning_rate_at(epoch));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut total = T::zero();
        let mut batches = 0usize;
        for chunk in order.chunks(self.budget.batch_size) {
            let x = data.feature_matrix(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.samples()[i].label).collect();
            let (loss, grads) = loss_and_grad(self.model.kind, &self.model.params, &x, &labels);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {loss}"),
                });
            }
            self.opt.step(&mut self.model.params, &grads, lr);
            total += loss;
            batches += 1;
        }
        if self.model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: "parameters diverged to non-finite values".into(),
            });
        }
        self.epoch += 1;
        Ok(total / T::from_usize(batches).unwrap())
    }
}

/// Trains a fresh classifier on a fixed dataset for the whole budget.
pub fn fit_classifier<T: Real>(
    kind: ClassifierKind,
    train: &Dataset<T>,
    budget: &TrainingBudget,
    seed: u64,
) -> Result<Classifier<T>> {
    if train.is_empty() {
        return Err(config_err("fit_classifier: empty training set"));
    }
    let mut trainer = ClassifierTrainer::new(kind, train.num_classes(), train.feature_dim(), budget, seed)?;
    while !trainer.is_finished() {
        trainer.train_epoch(train)?;
    }
    Ok(trainer.into_classifier())
}
