//! Special functions and exact binomial statistics.
//!
//! Everything here is a pure function of its arguments. The normal CDF uses a
//! positive-term series near the origin and Laplace's continued fraction for
//! the tails, so the lower tail keeps full relative precision. The quantile is
//! Acklam's rational approximation followed by one Newton step against the CDF.
//! Binomial tail sums are evaluated relative to the term nearest the mode and
//! rescaled in log space, which keeps them exact-to-rounding for `n` up to 10⁶.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities handed to the normal quantile anywhere in the system are first
/// clamped into `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-4;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("{value} is not a probability")))
        }
    }

    /// Accepts only the open interval `(0, 1)`.
    pub fn new_open(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("{value} is not in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Clamp `p` into `[clamp, 1 - clamp]`.
pub fn clamp_probability(p: f64, clamp: f64) -> f64 {
    p.clamp(clamp, 1.0 - clamp)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `P(Z > t)` for `t >= 0`, with full relative precision in the tail.
fn upper_tail(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < 3.0 {
        // Phi(t) - 1/2 = phi(t) * sum t^(2n+1) / (2n+1)!!, all terms positive.
        let t2 = t * t;
        let mut term = t;
        let mut sum = t;
        let mut n = 0.0;
        loop {
            term *= t2 / (2.0 * n + 3.0);
            sum += term;
            n += 1.0;
            if term <= sum * 1e-17 {
                break;
            }
        }
        0.5 - std_normal_pdf(t) * sum
    } else {
        // Laplace: Q(t) = phi(t) / (t + 1/(t + 2/(t + 3/(t + ...)))), modified Lentz.
        const TINY: f64 = 1e-300;
        let mut f = t;
        let mut c = t;
        let mut d = 0.0;
        for j in 1..5000 {
            let a = j as f64;
            d = t + a * d;
            if d.abs() < TINY {
                d = TINY;
            }
            d = 1.0 / d;
            c = t + a / c;
            if c.abs() < TINY {
                c = TINY;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        std_normal_pdf(t) / f
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z < 0.0 {
        upper_tail(-z)
    } else {
        1.0 - upper_tail(z)
    }
}

// Acklam's rational approximation, relative error below 1.15e-9.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn acklam_lower(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    let (a, b, c, d) = (&ACKLAM_A, &ACKLAM_B, &ACKLAM_C, &ACKLAM_D);
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    }
}

/// Inverse of [`std_normal_cdf`] on the open interval `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1].
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let x = acklam_lower(p);
    let err = std_normal_cdf(x) - p;
    x - err / std_normal_pdf(x)
}

/// `Phi^-1(clamp(p))`; total on `[0, 1]`.
pub fn clamped_quantile(p: f64, clamp: f64) -> f64 {
    let q = clamp_probability(p, clamp);
    std_normal_quantile(q).unwrap_or(if q < 0.5 { f64::NEG_INFINITY } else { f64::INFINITY })
}

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(256);
        let mut acc = 0.0_f64;
        table.push(0.0);
        for i in 1..256u32 {
            acc += f64::from(i).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln(n!)`, exact summation below 256 and Stirling's series above.
pub fn ln_factorial(n: u64) -> f64 {
    let table = ln_factorial_table();
    if (n as usize) < table.len() {
        return table[n as usize];
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x + 0.5 * (2.0 * PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `ln P(X = k)` for `X ~ Bin(n, p)`.
pub fn binom_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

/// `P(X >= k)` for `X ~ Bin(n, p)`.
pub fn binom_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let odds = p / (1.0 - p);
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let anchor = k.max(mode);

    // Terms are accumulated relative to the anchor term, which is the largest
    // term in the summed range, so every relative term is <= 1.
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    for j in anchor..n {
        term *= (n - j) as f64 / (j + 1) as f64 * odds;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    term = 1.0;
    let mut j = anchor;
    while j > k {
        term *= j as f64 / (n - j + 1) as f64 / odds;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
        j -= 1;
    }
    (binom_ln_pmf(anchor, n, p) + sum.ln()).exp().min(1.0)
}

fn check_counts(k: u64, n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("binomial test requires n >= 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    Ok(())
}

/// One-sided Clopper–Pearson lower confidence bound on a binomial proportion.
///
/// Returns the largest `p` at which observing `k` or more successes in `n`
/// trials still has probability at most `alpha`, so that the bound covers the
/// true proportion with probability at least `1 - alpha`.
pub fn binom_lower_confidence(k: u64, n: u64, alpha: f64) -> Result<f64> {
    check_counts(k, n)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    // The upper tail is increasing in p; bisect until the bracket collapses.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binom_upper_tail(k, n, mid) > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}

/// Exact two-sided binomial test p-value for `H0: p = p0`.
///
/// Sums the probability of every outcome no more likely than the observed one
/// (with the usual `1 + 1e-7` relative slack for ties), capped at 1.
pub fn binom_two_sided_pvalue(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_counts(k, n)?;
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 must be in (0, 1), got {p0}")));
    }
    if k as f64 == p0 * n as f64 {
        return Ok(1.0);
    }
    let threshold = binom_ln_pmf(k, n, p0) + (1.0f64 + 1e-7).ln();
    let total: f64 = (0..=n)
        .map(|j| binom_ln_pmf(j, n, p0))
        .filter(|&lp| lp <= threshold)
        .map(f64::exp)
        .sum();
    Ok(total.min(1.0))
}
