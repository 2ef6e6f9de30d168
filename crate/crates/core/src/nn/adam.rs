use crate::scalar::Scalar;

use super::mlp::{Dense, Gradients};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    beta1_pow: T,
    beta2_pow: T,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Dense<T>], lr: T, beta1: T, beta2: T, eps: T) -> Self {
        let zeros: Vec<Dense<T>> = params
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            beta1_pow: T::one(),
            beta2_pow: T::one(),
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn learning_rate(&self) -> T {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: T) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Dense<T>], grads: &Gradients<T>) {
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let c1 = T::one() - self.beta1_pow;
        let c2 = T::one() - self.beta2_pow;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            update(&mut p.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut p.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}
