//! Per-input gradient ascent on the smoothing scale, plus a grid-search
//! baseline spending the same evaluation budget.
//!
//! The objective is the plug-in radius from [`crate::smoothing::proxy_radius`]
//! evaluated on a single noise batch drawn up front, so that it is a
//! deterministic function of `sigma` and finite differences are meaningful.

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::classifiers::{ClassifierHandle, Point};
use crate::error::{Error, Result};
use crate::numeric::{clamped_quantile, std_normal_pdf, P_CLAMP};
use crate::smoothing::{
    radius_from_expectations, stream_rng, NoiseBatch, NoiseKind, ProxyEstimate, STREAM_OPTIMIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Reparameterized derivative through the classifier's input gradient.
    #[default]
    Analytic,
    /// Central difference of the plug-in radius in `sigma`.
    ScalarFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// The last iterate.
    #[default]
    Faithful,
    /// The iterate with the largest plug-in radius (first one on ties).
    BestIterate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaOptConfig {
    pub sigma0: f64,
    pub step_alpha: f64,
    pub iters_k: usize,
    pub n_samples: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub grad_mode: GradMode,
    pub return_mode: ReturnMode,
    /// Half-width of the central difference used by [`GradMode::ScalarFd`].
    pub fd_step: f64,
    pub noise: NoiseKind,
    pub p_clamp: f64,
    pub seed: u64,
}

impl Default for SigmaOptConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.25,
            step_alpha: 1e-4,
            iters_k: 100,
            n_samples: 1,
            sigma_min: 1e-3,
            sigma_max: 2.0,
            grad_mode: GradMode::Analytic,
            return_mode: ReturnMode::Faithful,
            fd_step: 1e-3,
            noise: NoiseKind::Gaussian,
            p_clamp: P_CLAMP,
            seed: 0,
        }
    }
}

impl SigmaOptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma0 && self.sigma0 <= self.sigma_max) {
            return bad(format!(
                "need 0 < sigma_min <= sigma0 <= sigma_max, got {} / {} / {}",
                self.sigma_min, self.sigma0, self.sigma_max
            ));
        }
        if !self.sigma_max.is_finite() {
            return bad("sigma_max must be finite".into());
        }
        if !(self.step_alpha > 0.0 && self.step_alpha.is_finite()) {
            return bad(format!("step size must be > 0, got {}", self.step_alpha));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        if !(self.fd_step > 0.0) {
            return bad(format!("fd_step must be > 0, got {}", self.fd_step));
        }
        if !(self.p_clamp > 0.0 && self.p_clamp < 0.5) {
            return bad(format!("p_clamp must be in (0, 0.5), got {}", self.p_clamp));
        }
        Ok(())
    }

    fn clip(&self, sigma: f64) -> f64 {
        sigma.clamp(self.sigma_min, self.sigma_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub sigma: f64,
    pub proxy_radius: f64,
    pub top_class: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SigmaTrace {
    pub entries: Vec<TraceEntry>,
    /// Number of iterations whose top class differs from the previous one.
    pub class_flips: usize,
}

impl SigmaTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First entry with the largest plug-in radius.
    pub fn best(&self) -> Option<&TraceEntry> {
        self.entries.iter().fold(None, |best: Option<&TraceEntry>, e| match best {
            Some(b) if b.proxy_radius >= e.proxy_radius => Some(b),
            _ => Some(e),
        })
    }

    fn push(&mut self, entry: TraceEntry) {
        if let Some(prev) = self.entries.last() {
            if prev.top_class != entry.top_class {
                self.class_flips += 1;
            }
        }
        self.entries.push(entry);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaOptOutcome {
    pub sigma_star: f64,
    pub trace: SigmaTrace,
}

/// Derivative of `p -> Phi^-1(clamp(p))`; zero where the clamp is active.
fn clamped_quantile_slope(p: f64, clamp: f64) -> f64 {
    if p <= clamp || p >= 1.0 - clamp {
        0.0
    } else {
        1.0 / std_normal_pdf(clamped_quantile(p, clamp))
    }
}

/// Single pass over the noise batch returning the plug-in radius and, when
/// requested, the reparameterized derivative of every class mean.
fn evaluate(
    c: &ClassifierHandle,
    x: &Point,
    sigma: f64,
    noise: &NoiseBatch,
    p_clamp: f64,
    with_derivative: bool,
) -> Result<(ProxyEstimate, Option<f64>)> {
    c.check_dim(x.dim())?;
    c.check_dim(noise.dim())?;
    if noise.is_empty() {
        return Err(Error::InvalidConfig("empty noise batch".into()));
    }
    if with_derivative && !c.provides_derivatives() {
        return Err(Error::UnsupportedDerivative);
    }
    let k = c.num_classes();
    let d = x.dim();
    let mut psi = vec![0.0; k];
    let mut dpsi = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let mut jvp = vec![0.0; k];
    let mut scratch = vec![0.0; 2 * (k + d)];
    let mut shifted = vec![0.0; d];
    for row in noise.rows() {
        for ((s, xi), e) in shifted.iter_mut().zip(x.as_slice()).zip(row) {
            *s = xi + sigma * e;
        }
        c.eval_raw(&shifted, &mut probs);
        psi.iter_mut().zip(&probs).for_each(|(a, p)| *a += p);
        if with_derivative {
            c.jvp_raw(&shifted, row, &mut jvp, &mut scratch)?;
            dpsi.iter_mut().zip(&jvp).for_each(|(a, g)| *a += g);
        }
    }
    let n = noise.len() as f64;
    psi.iter_mut().for_each(|v| *v /= n);
    let est = radius_from_expectations(&psi, sigma, noise.kind(), p_clamp)?;
    if !with_derivative {
        return Ok((est, None));
    }
    let da = dpsi[est.top_class] / n;
    let db = dpsi[est.runner_up] / n;
    let grad = match noise.kind() {
        NoiseKind::Gaussian => {
            let gap = clamped_quantile(est.e_top, p_clamp) - clamped_quantile(est.e_runner_up, p_clamp);
            0.5 * gap
                + 0.5
                    * sigma
                    * (clamped_quantile_slope(est.e_top, p_clamp) * da
                        - clamped_quantile_slope(est.e_runner_up, p_clamp) * db)
        }
        NoiseKind::Uniform => (est.e_top - est.e_runner_up) + sigma * (da - db),
    };
    Ok((est, Some(grad)))
}

fn proxy(c: &ClassifierHandle, x: &Point, sigma: f64, noise: &NoiseBatch, p_clamp: f64) -> Result<f64> {
    Ok(evaluate(c, x, sigma, noise, p_clamp, false)?.0.radius)
}

fn fd_gradient(
    c: &ClassifierHandle,
    x: &Point,
    sigma: f64,
    noise: &NoiseBatch,
    p_clamp: f64,
    fd_step: f64,
) -> Result<f64> {
    let h = fd_step.min(0.5 * sigma);
    let up = proxy(c, x, sigma + h, noise, p_clamp)?;
    let down = proxy(c, x, sigma - h, noise, p_clamp)?;
    Ok((up - down) / (2.0 * h))
}

/// `dR/dsigma` of the plug-in radius over a fixed noise batch.
pub fn grad_sigma(
    c: &ClassifierHandle,
    x: &Point,
    sigma: f64,
    noise: &NoiseBatch,
    mode: GradMode,
    p_clamp: f64,
    fd_step: f64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    match mode {
        GradMode::Analytic => Ok(evaluate(c, x, sigma, noise, p_clamp, true)?.1.unwrap_or_default()),
        GradMode::ScalarFd => fd_gradient(c, x, sigma, noise, p_clamp, fd_step),
    }
}

/// Draws the optimizer's noise batch from `cfg.seed`.
pub fn draw_noise(cfg: &SigmaOptConfig, dim: usize) -> NoiseBatch {
    let mut rng = stream_rng(cfg.seed, STREAM_OPTIMIZE);
    NoiseBatch::sample(cfg.noise, cfg.n_samples, dim, &mut rng)
}

/// Gradient ascent on the plug-in radius, projected onto
/// `[sigma_min, sigma_max]` after every step.
pub fn optimize_sigma(c: &ClassifierHandle, x: &Point, cfg: &SigmaOptConfig) -> Result<SigmaOptOutcome> {
    cfg.validate()?;
    c.check_dim(x.dim())?;
    let noise = draw_noise(cfg, x.dim());
    optimize_sigma_with_noise(c, x, cfg, &noise)
}

/// [`optimize_sigma`] with a caller-supplied noise batch. `cfg.n_samples`,
/// `cfg.noise` and `cfg.seed` are ignored.
pub fn optimize_sigma_with_noise(
    c: &ClassifierHandle,
    x: &Point,
    cfg: &SigmaOptConfig,
    noise: &NoiseBatch,
) -> Result<SigmaOptOutcome> {
    cfg.validate()?;
    if cfg.grad_mode == GradMode::Analytic && !c.provides_derivatives() {
        return Err(Error::UnsupportedDerivative);
    }
    let analytic = cfg.grad_mode == GradMode::Analytic;
    let mut trace = SigmaTrace::default();
    let mut sigma = cfg.sigma0;
    for iter in 0..=cfg.iters_k {
        let last = iter == cfg.iters_k;
        let (est, grad) = evaluate(c, x, sigma, noise, cfg.p_clamp, analytic && !last)?;
        trace.push(TraceEntry {
            iter,
            sigma,
            proxy_radius: est.radius,
            top_class: est.top_class,
        });
        if last {
            break;
        }
        let grad = match grad {
            Some(g) => g,
            None => fd_gradient(c, x, sigma, noise, cfg.p_clamp, cfg.fd_step)?,
        };
        sigma = cfg.clip(sigma + cfg.step_alpha * grad);
    }
    if trace.class_flips > 0 {
        debug!(flips = trace.class_flips, "top class changed during sigma optimization");
    }
    let sigma_star = match cfg.return_mode {
        ReturnMode::Faithful => sigma,
        ReturnMode::BestIterate => trace.best().map_or(sigma, |e| e.sigma),
    };
    Ok(SigmaOptOutcome { sigma_star, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub sigma_hat: f64,
    pub proxy_radius: f64,
    pub spacing: f64,
    /// `(sigma, plug-in radius)` at every grid point.
    pub grid: Vec<(f64, f64)>,
}

/// Exhaustive scan of `budget / cfg.n_samples` equally spaced scales
/// `delta, 2 delta, ..., grid_max`, sharing one noise batch of
/// `cfg.n_samples` draws. Returns the first maximizer.
pub fn grid_search_sigma(
    c: &ClassifierHandle,
    x: &Point,
    cfg: &SigmaOptConfig,
    budget: usize,
    grid_max: f64,
) -> Result<GridSearchOutcome> {
    if cfg.n_samples == 0 || budget % cfg.n_samples != 0 {
        return Err(Error::InvalidConfig(format!(
            "budget {budget} must be a multiple of n_samples {}",
            cfg.n_samples
        )));
    }
    let points = budget / cfg.n_samples;
    if points == 0 {
        return Err(Error::Empty("grid search with zero grid points".into()));
    }
    if !(grid_max > 0.0 && grid_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("grid_max must be > 0, got {grid_max}")));
    }
    c.check_dim(x.dim())?;
    let noise = draw_noise(cfg, x.dim());
    let spacing = grid_max / points as f64;
    let mut grid = Vec::with_capacity(points);
    let mut best = (0.0, f64::NEG_INFINITY);
    for j in 1..=points {
        let sigma = spacing * j as f64;
        let r = proxy(c, x, sigma, &noise, cfg.p_clamp)?;
        if r > best.1 {
            best = (sigma, r);
        }
        grid.push((sigma, r));
    }
    Ok(GridSearchOutcome {
        sigma_hat: best.0,
        proxy_radius: best.1,
        spacing,
        grid,
    })
}
