//! Closed-form smoothed probabilities of the analytic built-ins. These are the
//! ground truth the Monte Carlo machinery is tested against.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_pdf};

use super::{dot, Point};

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

fn check_same_dim(a: &Point, b: &Point) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// `E[1{w.(x + e) > b}]` for `e ~ N(0, sigma^2 I)`, i.e. `Phi((w.x - b) / (sigma ||w||))`.
pub fn halfspace_smoothed_prob(w: &Point, b: f64, x: &Point, sigma: f64) -> Result<f64> {
    check_same_dim(w, x)?;
    check_sigma(sigma)?;
    let norm = w.norm_l2();
    if norm == 0.0 {
        return Err(Error::Domain("half-space normal is zero".into()));
    }
    Ok(std_normal_cdf((dot(w.as_slice(), x.as_slice()) - b) / (sigma * norm)))
}

/// `E[Phi((w.(x + e) - b) / s)] = Phi((w.x - b) / sqrt(s^2 + sigma^2))` for unit `w`.
pub fn probit_halfspace_smoothed_prob(
    w_unit: &Point,
    b: f64,
    s: f64,
    x: &Point,
    sigma: f64,
) -> Result<f64> {
    check_same_dim(w_unit, x)?;
    if (w_unit.norm_l2() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "expected a unit normal, got norm {}",
            w_unit.norm_l2()
        )));
    }
    if !(s > 0.0) || !(sigma >= 0.0) {
        return Err(Error::Domain(format!("need s > 0 and sigma >= 0, got s = {s}, sigma = {sigma}")));
    }
    let margin = dot(w_unit.as_slice(), x.as_slice()) - b;
    Ok(std_normal_cdf(margin / (s * s + sigma * sigma).sqrt()))
}

/// CDF of the chi distribution with `dof` degrees of freedom.
///
/// Uses the upper regularized gamma function at half-integer shapes, built by
/// the recurrence `Q(a + 1, t) = Q(a, t) + t^a e^-t / Gamma(a + 1)`, which only
/// ever adds positive terms.
pub fn chi_cdf(dof: usize, x: f64) -> f64 {
    assert!(dof >= 1, "chi distribution needs at least one degree of freedom");
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    let t = 0.5 * x * x;
    let half_dof = dof as f64 / 2.0;
    let (mut a, mut upper, mut term) = if dof % 2 == 0 {
        (1.0, (-t).exp(), t * (-t).exp())
    } else {
        (0.5, 2.0 * std_normal_cdf(-x), t.sqrt() * (-t).exp() / (0.5 * PI.sqrt()))
    };
    while a < half_dof {
        upper += term;
        term *= t / (a + 1.0);
        a += 1.0;
    }
    (1.0 - upper).max(0.0)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == panels { b } else { lo + width };
            let (flo, fhi) = (f(lo), f(hi));
            let (whole, m, fm) = simpson(f, lo, flo, hi, fhi);
            adaptive_simpson(f, lo, flo, hi, fhi, whole, m, fm, tol / panels as f64, 40)
        })
        .sum()
}

/// `P(||x + e||_2 <= rho)` for `e ~ N(0, sigma^2 I_d)`: the smoothed class-1
/// probability of the nested-ball classifier.
///
/// At the origin this is the chi CDF at `rho / sigma`. Elsewhere the problem is
/// rotated so `x` lies on the first axis; conditioning on that coordinate `u`
/// leaves a centred chi CDF with `d - 1` degrees of freedom, and the remaining
/// 1-D integral over `u = rho sin(theta)` is done by adaptive Simpson.
pub fn nested_ball_smoothed_prob(rho: f64, x: &Point, sigma: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("rho must be > 0, got {rho}")));
    }
    check_sigma(sigma)?;
    let d = x.dim();
    let m = x.norm_l2();
    if m == 0.0 {
        return Ok(chi_cdf(d, rho / sigma));
    }
    if d == 1 {
        return Ok(std_normal_cdf((rho - m) / sigma) - std_normal_cdf((-rho - m) / sigma));
    }
    // The Gaussian weight in u is negligible beyond 12 sigma of m.
    let lo = (m - 12.0 * sigma).max(-rho);
    let hi = (m + 12.0 * sigma).min(rho);
    if lo >= hi {
        return Ok(0.0);
    }
    let theta_lo = (lo / rho).clamp(-1.0, 1.0).asin();
    let theta_hi = (hi / rho).clamp(-1.0, 1.0).asin();
    let integrand = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let chord = (rho * c).max(0.0);
        chord / sigma * std_normal_pdf((rho * s - m) / sigma) * chi_cdf(d - 1, chord / sigma)
    };
    debug_assert!(theta_lo >= -FRAC_PI_2 && theta_hi <= FRAC_PI_2);
    let p = integrate(&integrand, theta_lo, theta_hi, 64, 1e-12);
    Ok(p.clamp(0.0, 1.0))
}
