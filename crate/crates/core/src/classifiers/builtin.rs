use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_pdf};

use super::{dot, softmax_in_place, softmax_jvp, Classifier};

fn check_vector(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} must be non-empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("{name} has non-finite entries")));
    }
    Ok(())
}

/// Returns the same probability vector everywhere.
#[derive(Debug, Clone)]
pub struct Constant {
    probs: Vec<f64>,
    dim: usize,
}

impl Constant {
    pub fn new(probs: Vec<f64>, dim: usize) -> Result<Self> {
        super::SimplexVector::new(probs.clone())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(Self { probs, dim })
    }

    pub fn uniform(num_classes: usize, dim: usize) -> Result<Self> {
        Self::new(vec![1.0 / num_classes as f64; num_classes], dim)
    }
}

impl Classifier for Constant {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.probs);
    }

    fn jvp_into(&self, _x: &[f64], _v: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }

    fn differentiable(&self) -> bool {
        true
    }
}

/// `softmax(W x + b)`.
#[derive(Debug, Clone)]
pub struct AffineSoftmax {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl AffineSoftmax {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 || weights.len() != bias.len() {
            return Err(Error::InvalidConfig(
                "affine softmax needs >= 2 weight rows and one bias per row".into(),
            ));
        }
        let dim = weights[0].len();
        for row in &weights {
            check_vector("weight row", row)?;
            if row.len() != dim {
                return Err(Error::InvalidConfig("ragged weight matrix".into()));
            }
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("bias has non-finite entries".into()));
        }
        Ok(Self { weights, bias })
    }
}

impl Classifier for AffineSoftmax {
    fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn dim(&self) -> usize {
        self.weights[0].len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(&self.weights).zip(&self.bias) {
            *o = dot(row, x) + b;
        }
        softmax_in_place(out);
    }

    fn jvp_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        let mut probs = vec![0.0; self.num_classes()];
        self.eval_into(x, &mut probs);
        let logit_dot: Vec<f64> = self.weights.iter().map(|row| dot(row, v)).collect();
        softmax_jvp(&probs, &logit_dot, out);
        true
    }

    fn differentiable(&self) -> bool {
        true
    }
}

/// Binary soft classifier with `f^1(x) = Phi((w.x - b) / s)`.
#[derive(Debug, Clone)]
pub struct ProbitHalfspace {
    w: Vec<f64>,
    b: f64,
    s: f64,
}

impl ProbitHalfspace {
    pub fn new(w: Vec<f64>, b: f64, s: f64) -> Result<Self> {
        check_vector("w", &w)?;
        if !(s > 0.0 && s.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidConfig(format!("probit scale must be > 0, got {s}")));
        }
        Ok(Self { w, b, s })
    }

    fn t(&self, x: &[f64]) -> f64 {
        (dot(&self.w, x) - self.b) / self.s
    }
}

impl Classifier for ProbitHalfspace {
    fn num_classes(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let t = self.t(x);
        // Evaluate each side from its own tail to keep both accurate.
        out[1] = std_normal_cdf(t);
        out[0] = std_normal_cdf(-t);
    }

    fn jvp_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        let d1 = std_normal_pdf(self.t(x)) * dot(&self.w, v) / self.s;
        out[1] = d1;
        out[0] = -d1;
        true
    }

    fn differentiable(&self) -> bool {
        true
    }
}

/// Hard binary classifier: class 1 iff `w.x > b`.
#[derive(Debug, Clone)]
pub struct HardHalfspace {
    w: Vec<f64>,
    b: f64,
}

impl HardHalfspace {
    pub fn new(w: Vec<f64>, b: f64) -> Result<Self> {
        check_vector("w", &w)?;
        if w.iter().all(|c| *c == 0.0) || !b.is_finite() {
            return Err(Error::InvalidConfig("half-space normal must be non-zero".into()));
        }
        Ok(Self { w, b })
    }

    /// The axis-aligned threshold `1{x_axis > threshold}` in `dim` dimensions.
    pub fn axis_threshold(dim: usize, axis: usize, threshold: f64) -> Result<Self> {
        if axis >= dim {
            return Err(Error::InvalidConfig(format!("axis {axis} out of range for dim {dim}")));
        }
        let mut w = vec![0.0; dim];
        w[axis] = 1.0;
        Self::new(w, threshold)
    }
}

impl Classifier for HardHalfspace {
    fn num_classes(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let positive = dot(&self.w, x) > self.b;
        out[1] = if positive { 1.0 } else { 0.0 };
        out[0] = 1.0 - out[1];
    }
}

/// Hard binary classifier: class 1 iff `||x||_2 <= rho`.
#[derive(Debug, Clone)]
pub struct NestedBall {
    rho: f64,
    dim: usize,
}

impl NestedBall {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "nested ball needs rho > 0 and dim >= 1, got rho = {rho}, dim = {dim}"
            )));
        }
        Ok(Self { rho, dim })
    }
}

impl Classifier for NestedBall {
    fn num_classes(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let inside = dot(x, x) <= self.rho * self.rho;
        out[1] = if inside { 1.0 } else { 0.0 };
        out[0] = 1.0 - out[1];
    }
}
