use crate::linalg::Matrix;
use crate::scalar::Real;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub(crate) struct Sgd<T> {
    velocity: Vec<Matrix<T>>,
    momentum: T,
    weight_decay: T,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &[Matrix<T>], momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            momentum: T::lit(momentum),
            weight_decay: T::lit(weight_decay),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>], lr: T) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(v.as_mut_slice())
            {
                *vi = self.momentum * *vi + gi + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Adam<T> {
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    t: i32,
    lr: T,
    beta1: T,
    beta2: T,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Matrix<T>], lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr: T::lit(lr),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>]) {
        self.t += 1;
        let one = T::one();
        let eps = T::lit(1e-8);
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
