//! Base classifiers `f: R^d -> simplex over k labels`.
//!
//! A [`Classifier`] works on raw slices so Monte Carlo loops can reuse scratch
//! buffers. [`ClassifierHandle`] wraps one behind an `Arc` and adds the checked
//! public surface: dimension validation, simplex construction and the
//! finite-difference fallback for directional derivatives.

mod builtin;
mod mlp;
mod oracles;

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builtin::{AffineSoftmax, Constant, HardHalfspace, NestedBall, ProbitHalfspace};
pub use mlp::{Mlp, MlpGrad, MAX_HIDDEN};
pub use oracles::{
    chi_cdf, halfspace_smoothed_prob, nested_ball_smoothed_prob, probit_halfspace_smoothed_prob,
};

/// A point in input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("a point needs at least one coordinate".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate {bad}")));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.0
    }
}

/// Class probabilities: non-negative, summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Domain(format!("negative or NaN entry in {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

/// Directional derivative of a softmax output given the logit derivative.
pub(crate) fn softmax_jvp(probs: &[f64], logit_dot: &[f64], out: &mut [f64]) {
    let mean: f64 = probs.iter().zip(logit_dot).map(|(p, z)| p * z).sum();
    for ((o, p), z) in out.iter_mut().zip(probs).zip(logit_dot) {
        *o = p * (z - mean);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A soft classifier over `num_classes()` labels on `dim()`-dimensional inputs.
///
/// Implementations may assume `x.len() == dim()` and
/// `out.len() == num_classes()`; the handle checks both.
pub trait Classifier: Send + Sync + fmt::Debug {
    fn num_classes(&self) -> usize;

    fn dim(&self) -> usize;

    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// Writes `v . grad f^c(x)` for every class `c`. Returns `false` when the
    /// classifier only provides values.
    fn jvp_into(&self, _x: &[f64], _v: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn differentiable(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierHandle {
    inner: Arc<dyn Classifier>,
    fd_fallback: bool,
}

impl ClassifierHandle {
    pub fn new<C: Classifier + 'static>(classifier: C) -> Self {
        Self {
            inner: Arc::new(classifier),
            fd_fallback: false,
        }
    }

    /// Allow central finite differences when the classifier has no derivatives.
    pub fn with_fd_fallback(mut self, enabled: bool) -> Self {
        self.fd_fallback = enabled;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// True when directional derivatives are available, natively or by fallback.
    pub fn provides_derivatives(&self) -> bool {
        self.inner.differentiable() || self.fd_fallback
    }

    pub fn natively_differentiable(&self) -> bool {
        self.inner.differentiable()
    }

    pub fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn predict_probs(&self, x: &Point) -> Result<SimplexVector> {
        self.check_dim(x.dim())?;
        let mut out = vec![0.0; self.num_classes()];
        self.inner.eval_into(x.as_slice(), &mut out);
        SimplexVector::new(out)
    }

    /// `v . grad f^class_idx (x)`.
    pub fn directional_derivative(&self, x: &Point, class_idx: usize, v: &Point) -> Result<f64> {
        self.check_dim(x.dim())?;
        self.check_dim(v.dim())?;
        if class_idx >= self.num_classes() {
            return Err(Error::Domain(format!(
                "class {class_idx} out of range for {} classes",
                self.num_classes()
            )));
        }
        let mut out = vec![0.0; self.num_classes()];
        let mut scratch = vec![0.0; 2 * (self.num_classes() + self.dim())];
        self.jvp_raw(x.as_slice(), v.as_slice(), &mut out, &mut scratch)?;
        Ok(out[class_idx])
    }

    pub(crate) fn eval_raw(&self, x: &[f64], out: &mut [f64]) {
        self.inner.eval_into(x, out);
    }

    /// Directional derivatives of all classes; `scratch` must hold at least
    /// `2 * (num_classes + dim)` values.
    pub(crate) fn jvp_raw(
        &self,
        x: &[f64],
        v: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<()> {
        if self.inner.differentiable() && self.inner.jvp_into(x, v, out) {
            return Ok(());
        }
        if !self.fd_fallback {
            return Err(Error::UnsupportedDerivative);
        }
        let k = self.num_classes();
        let d = self.dim();
        let h = 1e-4 * (1.0 + x.iter().fold(0.0_f64, |m, c| m.max(c.abs())));
        let (plus, rest) = scratch.split_at_mut(k);
        let (minus, rest) = rest.split_at_mut(k);
        let (shifted, _) = rest.split_at_mut(d);
        for ((s, xi), vi) in shifted.iter_mut().zip(x).zip(v) {
            *s = xi + h * vi;
        }
        self.inner.eval_into(shifted, plus);
        for ((s, xi), vi) in shifted.iter_mut().zip(x).zip(v) {
            *s = xi - h * vi;
        }
        self.inner.eval_into(shifted, minus);
        for ((o, p), m) in out.iter_mut().zip(plus.iter()).zip(minus.iter()) {
            *o = (p - m) / (2.0 * h);
        }
        Ok(())
    }

    pub(crate) fn hard_predict_raw(&self, x: &[f64], scratch: &mut [f64]) -> usize {
        self.inner.eval_into(x, scratch);
        argmax(scratch)
    }
}

/// JSON description of a built-in classifier, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Constant {
        probs: Vec<f64>,
        dim: usize,
    },
    AffineSoftmax {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    ProbitHalfspace {
        w: Vec<f64>,
        b: f64,
        s: f64,
    },
    HardHalfspace {
        w: Vec<f64>,
        b: f64,
    },
    NestedBall {
        rho: f64,
        dim: usize,
    },
    Mlp(Mlp),
}

impl ClassifierSpec {
    pub fn build(&self) -> Result<ClassifierHandle> {
        Ok(match self {
            Self::Constant { probs, dim } => ClassifierHandle::new(Constant::new(probs.clone(), *dim)?),
            Self::AffineSoftmax { weights, bias } => {
                ClassifierHandle::new(AffineSoftmax::new(weights.clone(), bias.clone())?)
            }
            Self::ProbitHalfspace { w, b, s } => {
                ClassifierHandle::new(ProbitHalfspace::new(w.clone(), *b, *s)?)
            }
            Self::HardHalfspace { w, b } => ClassifierHandle::new(HardHalfspace::new(w.clone(), *b)?),
            Self::NestedBall { rho, dim } => ClassifierHandle::new(NestedBall::new(*rho, *dim)?),
            Self::Mlp(mlp) => {
                mlp.validate()?;
                ClassifierHandle::new(mlp.clone())
            }
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.build()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
