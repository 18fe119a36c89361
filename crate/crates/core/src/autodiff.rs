//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in evaluation order. [`Graph::backward`]
//! walks the record in reverse and accumulates gradients for every node that
//! contributed to the scalar loss.

use crate::linalg::Matrix;
use crate::scalar::Real;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// Adds a `1 × n` row to every row of the left operand.
    AddRow(Var, Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Add(Var, Var),
    ConcatCols(Var, Var),
    /// Mean softmax cross-entropy; caches the softmax probabilities.
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix<T>,
    },
    /// Mean binary cross-entropy on logits against fixed targets.
    BceWithLogits { logits: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs and parameters both enter as leaves.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.cols(), "add_row width mismatch");
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(r.as_slice()) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// `x · w + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.rows(), mb.rows(), "concat_cols row mismatch");
        let value = Matrix::from_fn(ma.rows(), ma.cols() + mb.cols(), |r, c| {
            if c < ma.cols() {
                ma[(r, c)]
            } else {
                mb[(r, c - ma.cols())]
            }
        });
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), labels.len(), "one label per row");
        let probs = softmax_rows(l);
        let n = T::from_usize(labels.len().max(1)).unwrap();
        let mut loss = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = l.row(r);
            loss += crate::scalar::log_sum_exp(row) - row[y];
        }
        let value = Matrix::from_vec(1, 1, vec![loss / n]);
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.shape(), (targets.len(), 1), "bce expects an n × 1 column");
        let n = T::from_usize(targets.len().max(1)).unwrap();
        let loss: T = l
            .as_slice()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| softplus(x) - t * x)
            .sum();
        let value = Matrix::from_vec(1, 1, vec![loss / n]);
        self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![T::one()]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.column_sums());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |gi, y| gi * (T::one() - y * y));
                    accumulate(&mut grads, *a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let da = g.zip_map(self.value(*a), |gi, x| if x > T::zero() { gi } else { gi * s });
                    accumulate(&mut grads, *a, da);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::ConcatCols(a, b) => {
                    let wa = self.value(*a).cols();
                    let wb = self.value(*b).cols();
                    let da = Matrix::from_fn(g.rows(), wa, |r, c| g[(r, c)]);
                    let db = Matrix::from_fn(g.rows(), wb, |r, c| g[(r, wa + c)]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g[(0, 0)] / T::from_usize(labels.len().max(1)).unwrap();
                    let mut d = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        d[(r, y)] -= T::one();
                    }
                    accumulate(&mut grads, *logits, d.scale(scale));
                }
                Op::BceWithLogits { logits, targets } => {
                    let scale = g[(0, 0)] / T::from_usize(targets.len().max(1)).unwrap();
                    let l = self.value(*logits);
                    let d = Matrix::from_fn(l.rows(), 1, |r, _| (sigmoid(l[(r, 0)]) - targets[r]) * scale);
                    accumulate(&mut grads, *logits, d);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled to `shape` when `v` did not contribute.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Matrix<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
