//! Monte Carlo prediction and certification of smoothed classifiers.
//!
//! Two instantiations of the radius formula live here. Certification is the
//! sound one: the top class is chosen from `n0` hard votes, its probability is
//! lower-bounded with Clopper–Pearson on `n_cert` fresh votes, and the runner-up
//! is bounded by `1 - p_lower`. [`proxy_radius`] is the plug-in version used
//! only inside the optimizer: sample means of the soft outputs, no confidence
//! bound, two-sided gap between the top two classes.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifiers::{argmax, ClassifierHandle, Point};
use crate::error::{Error, Result};
use crate::numeric::{
    binom_lower_confidence, binom_two_sided_pvalue, clamp_probability, clamped_quantile,
    Probability, P_CLAMP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Smoothing distribution family. Gaussian noise certifies ℓ2 balls, uniform
/// noise on a cube certifies ℓ1 balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Uniform,
}

impl NoiseKind {
    pub fn norm(self) -> Norm {
        match self {
            NoiseKind::Gaussian => Norm::L2,
            NoiseKind::Uniform => Norm::L1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Class(usize),
    Abstain,
}

impl Prediction {
    pub fn class(self) -> Option<usize> {
        match self {
            Prediction::Class(c) => Some(c),
            Prediction::Abstain => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Class(c) => write!(f, "{c}"),
            Prediction::Abstain => f.write_str("ABSTAIN"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCertConfig {
    /// Noise scale: the Gaussian standard deviation, or the half-width of the
    /// uniform cube for ℓ1 certification.
    pub sigma: f64,
    pub n0: u64,
    pub n_cert: u64,
    pub alpha_fail: Probability,
    pub seed: u64,
    pub p_clamp: f64,
}

impl Default for GaussianCertConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            n0: 100,
            n_cert: 100_000,
            alpha_fail: Probability::new(0.001).expect("valid"),
            seed: 0,
            p_clamp: P_CLAMP,
        }
    }
}

impl GaussianCertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n0 == 0 || self.n_cert < self.n0 {
            return Err(Error::InvalidConfig(format!(
                "need n0 >= 1 and n_cert >= n0, got n0 = {}, n_cert = {}",
                self.n0, self.n_cert
            )));
        }
        let alpha = self.alpha_fail.value();
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha_fail must be in (0, 1), got {alpha}")));
        }
        if !(self.p_clamp > 0.0 && self.p_clamp < 0.5) {
            return Err(Error::InvalidConfig(format!("p_clamp must be in (0, 0.5), got {}", self.p_clamp)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationOutcome {
    pub prediction: Prediction,
    pub radius: f64,
    /// Raw Clopper–Pearson lower bound on the top-class probability.
    pub p_lower: f64,
    pub sigma_used: f64,
    pub norm: Norm,
    pub samples_used: u64,
}

impl CertificationOutcome {
    fn abstain(p_lower: f64, sigma_used: f64, norm: Norm, samples_used: u64) -> Self {
        Self {
            prediction: Prediction::Abstain,
            radius: 0.0,
            p_lower,
            sigma_used,
            norm,
            samples_used,
        }
    }
}

// Stream tags for per-purpose generators derived from one seed.
pub(crate) const STREAM_SELECT: u64 = 0x5e1e_c7;
pub(crate) const STREAM_ESTIMATE: u64 = 0xe571_4a7e;
pub(crate) const STREAM_OPTIMIZE: u64 = 0x0b71_313e;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(seed, index)`. Campaigns use this to give
/// every input its own stream so results do not depend on scheduling.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream))
}

/// `n` standardized noise vectors of dimension `d`, drawn once and reused.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    kind: NoiseKind,
    dim: usize,
    draws: Vec<f64>,
}

impl NoiseBatch {
    pub fn sample<R: Rng + ?Sized>(kind: NoiseKind, n: usize, dim: usize, rng: &mut R) -> Self {
        let mut draws = vec![0.0; n * dim];
        fill_noise(kind, rng, &mut draws);
        Self { kind, dim, draws }
    }

    pub fn gaussian<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        Self::sample(NoiseKind::Gaussian, n, dim, rng)
    }

    pub fn uniform<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        Self::sample(NoiseKind::Uniform, n, dim, rng)
    }

    /// Wraps explicit draws, laid out row-major.
    pub fn from_draws(kind: NoiseKind, dim: usize, draws: Vec<f64>) -> Result<Self> {
        if dim == 0 || draws.is_empty() || draws.len() % dim != 0 {
            return Err(Error::InvalidConfig("noise draws must form whole rows".into()));
        }
        Ok(Self { kind, dim, draws })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }
}

fn fill_noise<R: Rng + ?Sized>(kind: NoiseKind, rng: &mut R, out: &mut [f64]) {
    match kind {
        NoiseKind::Gaussian => out.iter_mut().for_each(|e| *e = rng.sample(StandardNormal)),
        NoiseKind::Uniform => out.iter_mut().for_each(|e| *e = rng.random_range(-1.0..=1.0)),
    }
}

/// Hard-vote counts of `c` at `x + scale * noise` over `n` fresh draws.
pub fn sample_counts<R: Rng + ?Sized>(
    c: &ClassifierHandle,
    x: &Point,
    scale: f64,
    kind: NoiseKind,
    n: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    c.check_dim(x.dim())?;
    let d = x.dim();
    let mut counts = vec![0u64; c.num_classes()];
    let mut noise = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut probs = vec![0.0; c.num_classes()];
    for _ in 0..n {
        fill_noise(kind, rng, &mut noise);
        for ((s, xi), e) in shifted.iter_mut().zip(x.as_slice()).zip(&noise) {
            *s = xi + scale * e;
        }
        counts[c.hard_predict_raw(&shifted, &mut probs)] += 1;
    }
    Ok(counts)
}

/// Top class if the binomial test of top versus runner-up votes rejects a
/// fair coin at level `alpha`, otherwise abstain.
pub fn predict_from_counts(counts: &[u64], alpha: f64) -> Result<Prediction> {
    let (top, top_count) = top_count(counts);
    let runner_up = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, &n)| n)
        .max()
        .unwrap_or(0);
    if top_count + runner_up == 0 {
        return Ok(Prediction::Abstain);
    }
    let p = binom_two_sided_pvalue(top_count, top_count + runner_up, 0.5)?;
    Ok(if p <= alpha {
        Prediction::Class(top)
    } else {
        Prediction::Abstain
    })
}

/// Index and count of the most-voted class; lowest index wins ties.
fn top_count(counts: &[u64]) -> (usize, u64) {
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate().skip(1) {
        if n > counts[best] {
            best = i;
        }
    }
    (best, counts[best])
}

pub fn smooth_predict(c: &ClassifierHandle, x: &Point, cfg: &GaussianCertConfig) -> Result<Prediction> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_SELECT);
    let counts = sample_counts(c, x, cfg.sigma, NoiseKind::Gaussian, cfg.n0, &mut rng)?;
    predict_from_counts(&counts, cfg.alpha_fail.value())
}

/// `sigma * Phi^-1(p_lower)` when `p_lower > 1/2`.
pub fn l2_radius_from_lower_bound(p_lower: f64, sigma: f64, p_clamp: f64) -> Option<f64> {
    (p_lower > 0.5).then(|| sigma * clamped_quantile(p_lower, p_clamp))
}

/// `lambda * (p_lower - (1 - p_lower))` when `p_lower > 1/2`.
pub fn l1_radius_from_lower_bound(p_lower: f64, lambda: f64, p_clamp: f64) -> Option<f64> {
    (p_lower > 0.5).then(|| lambda * (2.0 * clamp_probability(p_lower, p_clamp) - 1.0))
}

fn certify_with(
    c: &ClassifierHandle,
    x: &Point,
    scale: f64,
    kind: NoiseKind,
    cfg: &GaussianCertConfig,
) -> Result<CertificationOutcome> {
    let norm = kind.norm();
    let samples = cfg.n0 + cfg.n_cert;
    let mut select = stream_rng(cfg.seed, STREAM_SELECT);
    let counts0 = sample_counts(c, x, scale, kind, cfg.n0, &mut select)?;
    let (candidate, _) = top_count(&counts0);

    let mut estimate = stream_rng(cfg.seed, STREAM_ESTIMATE);
    let counts = sample_counts(c, x, scale, kind, cfg.n_cert, &mut estimate)?;
    let p_lower = binom_lower_confidence(counts[candidate], cfg.n_cert, cfg.alpha_fail.value())?;

    let radius = match kind {
        NoiseKind::Gaussian => l2_radius_from_lower_bound(p_lower, scale, cfg.p_clamp),
        NoiseKind::Uniform => l1_radius_from_lower_bound(p_lower, scale, cfg.p_clamp),
    };
    Ok(match radius {
        Some(radius) => CertificationOutcome {
            prediction: Prediction::Class(candidate),
            radius,
            p_lower,
            sigma_used: scale,
            norm,
            samples_used: samples,
        },
        None => CertificationOutcome::abstain(p_lower, scale, norm, samples),
    })
}

/// Sound ℓ2 certificate under `N(0, sigma^2 I)` smoothing.
pub fn certify_l2(c: &ClassifierHandle, x: &Point, cfg: &GaussianCertConfig) -> Result<CertificationOutcome> {
    cfg.validate()?;
    certify_with(c, x, cfg.sigma, NoiseKind::Gaussian, cfg)
}

/// Sound ℓ1 certificate under uniform smoothing on `[-lambda, lambda]^d`.
/// `cfg.sigma` is ignored in favour of `lambda`.
pub fn certify_l1(
    c: &ClassifierHandle,
    x: &Point,
    lambda: f64,
    cfg: &GaussianCertConfig,
) -> Result<CertificationOutcome> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    cfg.with_sigma(lambda).validate()?;
    certify_with(c, x, lambda, NoiseKind::Uniform, cfg)
}

/// Plug-in radius estimate from the soft-output sample mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEstimate {
    pub radius: f64,
    pub top_class: usize,
    pub runner_up: usize,
    pub e_top: f64,
    pub e_runner_up: f64,
}

/// Radius from expected class scores `psi` at smoothing scale `scale`.
///
/// Gaussian: `scale / 2 * (Phi^-1(E_A) - Phi^-1(E_B))` with both expectations
/// clamped first. Uniform: `scale * (E_A - E_B)`.
pub fn radius_from_expectations(psi: &[f64], scale: f64, kind: NoiseKind, p_clamp: f64) -> Result<ProxyEstimate> {
    if psi.len() < 2 {
        return Err(Error::InvalidConfig("plug-in radius needs at least two classes".into()));
    }
    let top_class = argmax(psi);
    let mut runner_up = usize::from(top_class == 0);
    for (i, v) in psi.iter().enumerate() {
        if i != top_class && *v > psi[runner_up] {
            runner_up = i;
        }
    }
    let (e_top, e_runner_up) = (psi[top_class], psi[runner_up]);
    let radius = match kind {
        NoiseKind::Gaussian => {
            0.5 * scale * (clamped_quantile(e_top, p_clamp) - clamped_quantile(e_runner_up, p_clamp))
        }
        NoiseKind::Uniform => scale * (e_top - e_runner_up),
    };
    Ok(ProxyEstimate {
        radius,
        top_class,
        runner_up,
        e_top,
        e_runner_up,
    })
}

/// `psi(scale) = 1/n sum_i f(x + scale * noise_i)`.
pub fn smoothed_mean(c: &ClassifierHandle, x: &Point, scale: f64, noise: &NoiseBatch) -> Result<Vec<f64>> {
    c.check_dim(x.dim())?;
    c.check_dim(noise.dim())?;
    if noise.is_empty() {
        return Err(Error::InvalidConfig("empty noise batch".into()));
    }
    let k = c.num_classes();
    let mut psi = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let mut shifted = vec![0.0; x.dim()];
    for row in noise.rows() {
        for ((s, xi), e) in shifted.iter_mut().zip(x.as_slice()).zip(row) {
            *s = xi + scale * e;
        }
        c.eval_raw(&shifted, &mut probs);
        for (acc, p) in psi.iter_mut().zip(&probs) {
            *acc += p;
        }
    }
    let n = noise.len() as f64;
    psi.iter_mut().for_each(|v| *v /= n);
    Ok(psi)
}

/// Plug-in radius at `sigma` over a fixed noise batch. Not a certificate.
pub fn proxy_radius(
    c: &ClassifierHandle,
    x: &Point,
    sigma: f64,
    noise: &NoiseBatch,
    p_clamp: f64,
) -> Result<ProxyEstimate> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    let psi = smoothed_mean(c, x, sigma, noise)?;
    radius_from_expectations(&psi, sigma, noise.kind(), p_clamp)
}
