use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{dot, softmax_in_place, softmax_jvp, Classifier};

pub const MAX_HIDDEN: usize = 32;

/// Two-layer perceptron: `softmax(W2 tanh(W1 x + b1) + b2)`.
///
/// The only trainable built-in. Weights serialize to the same JSON document
/// used to configure every other classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Gradient buffers with the same shapes as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl MlpGrad {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            w1: vec![vec![0.0; model.dim()]; model.hidden()],
            b1: vec![0.0; model.hidden()],
            w2: vec![vec![0.0; model.hidden()]; model.classes()],
            b2: vec![0.0; model.classes()],
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new_random<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 || hidden > MAX_HIDDEN || classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "perceptron needs dim >= 1, 1..={MAX_HIDDEN} hidden units and >= 2 classes"
            )));
        }
        let mut layer = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-bound..bound)).collect())
                .collect()
        };
        let w1 = layer(hidden, dim);
        let w2 = layer(classes, hidden);
        Ok(Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.b1.len();
        if hidden == 0 || hidden > MAX_HIDDEN {
            return Err(Error::InvalidConfig(format!(
                "perceptron needs 1..={MAX_HIDDEN} hidden units, got {hidden}"
            )));
        }
        if self.w1.len() != hidden || self.w2.len() != self.b2.len() || self.b2.len() < 2 {
            return Err(Error::InvalidConfig("perceptron layer shapes disagree".into()));
        }
        let dim = self.w1[0].len();
        if dim == 0 || self.w1.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("ragged first-layer weights".into()));
        }
        if self.w2.iter().any(|r| r.len() != hidden) {
            return Err(Error::InvalidConfig("ragged second-layer weights".into()));
        }
        let all = self
            .w1
            .iter()
            .chain(&self.w2)
            .flatten()
            .chain(&self.b1)
            .chain(&self.b2);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite perceptron weight".into()));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn classes(&self) -> usize {
        self.b2.len()
    }

    fn hidden_activations(&self, x: &[f64], h: &mut [f64]) {
        for ((a, row), b) in h.iter_mut().zip(&self.w1).zip(&self.b1) {
            *a = (dot(row, x) + b).tanh();
        }
    }

    fn head(&self, h: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(&self.w2).zip(&self.b2) {
            *o = dot(row, h) + b;
        }
        softmax_in_place(out);
    }

    /// Adds the cross-entropy gradient at `(x, label)` to `grad`, scaled by
    /// `weight`, and returns the unscaled loss.
    pub fn accumulate_cross_entropy_grad(
        &self,
        x: &[f64],
        label: usize,
        weight: f64,
        grad: &mut MlpGrad,
    ) -> f64 {
        let mut h = [0.0; MAX_HIDDEN];
        let h = &mut h[..self.hidden()];
        self.hidden_activations(x, h);
        let mut probs = vec![0.0; self.classes()];
        self.head(h, &mut probs);
        let loss = -probs[label].max(1e-300).ln();

        // d loss / d logits = probs - onehot(label)
        let mut dz = probs;
        dz[label] -= 1.0;
        let mut dh = [0.0; MAX_HIDDEN];
        let dh = &mut dh[..self.hidden()];
        for (c, dzc) in dz.iter().enumerate() {
            grad.b2[c] += weight * dzc;
            for (j, hj) in h.iter().enumerate() {
                grad.w2[c][j] += weight * dzc * hj;
                dh[j] += dzc * self.w2[c][j];
            }
        }
        for (j, (dhj, hj)) in dh.iter().zip(h.iter()).enumerate() {
            let da = dhj * (1.0 - hj * hj);
            grad.b1[j] += weight * da;
            for (g, xi) in grad.w1[j].iter_mut().zip(x) {
                *g += weight * da * xi;
            }
        }
        loss
    }

    /// Plain gradient-descent update.
    pub fn apply_gradient(&mut self, grad: &MlpGrad, learning_rate: f64) {
        let step = |p: &mut [f64], g: &[f64]| {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= learning_rate * gi;
            }
        };
        for (p, g) in self.w1.iter_mut().zip(&grad.w1) {
            step(p, g);
        }
        for (p, g) in self.w2.iter_mut().zip(&grad.w2) {
            step(p, g);
        }
        step(&mut self.b1, &grad.b1);
        step(&mut self.b2, &grad.b2);
    }
}

impl Classifier for Mlp {
    fn num_classes(&self) -> usize {
        self.classes()
    }

    fn dim(&self) -> usize {
        self.w1[0].len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut h = [0.0; MAX_HIDDEN];
        let h = &mut h[..self.hidden()];
        self.hidden_activations(x, h);
        self.head(h, out);
    }

    fn jvp_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        let mut h = [0.0; MAX_HIDDEN];
        let h = &mut h[..self.hidden()];
        self.hidden_activations(x, h);
        let mut h_dot = [0.0; MAX_HIDDEN];
        let h_dot = &mut h_dot[..self.hidden()];
        for ((hd, row), hj) in h_dot.iter_mut().zip(&self.w1).zip(h.iter()) {
            *hd = (1.0 - hj * hj) * dot(row, v);
        }
        let mut probs = vec![0.0; self.classes()];
        self.head(h, &mut probs);
        let logit_dot: Vec<f64> = self.w2.iter().map(|row| dot(row, h_dot)).collect();
        softmax_jvp(&probs, &logit_dot, out);
        true
    }

    fn differentiable(&self) -> bool {
        true
    }
}
