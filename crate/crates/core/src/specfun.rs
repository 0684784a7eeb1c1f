//! Special functions and distribution primitives shared by the estimators.
//!
//! `ln Γ` and `erfc` come from `libm` (ports of the musl implementations,
//! accurate to a few ulps everywhere on the positive axis). Everything else is
//! implemented here.

use crate::error::{domain, Result};

/// Tolerances for iterative routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealTolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for RealTolerance {
    fn default() -> Self {
        Self { abs_tol: 1e-300, rel_tol: 1e-15, max_iterations: 100_000 }
    }
}

/// `ln Γ(x)` without argument checking. Callers guarantee `x > 0`.
#[inline]
pub(crate) fn lgamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("log_gamma requires a finite x > 0, got {x}"));
    }
    Ok(lgamma(x))
}

/// `ln(Γ(x + s) / Γ(x))` for `x > 0`, `x + s > 0`.
///
/// Differencing two `ln Γ` values loses about `ln Γ(x)·ε` absolute accuracy,
/// so for large `x` the Stirling series is differenced term by term instead.
pub(crate) fn ln_gamma_ratio(x: f64, s: f64) -> f64 {
    if x + s.min(0.0) < 10.0 {
        if s.abs() > 5.0 {
            return lgamma(x + s) - lgamma(x);
        }
        // Γ(x+s)/Γ(x) = Γ(x+N+s)/Γ(x+N) · Π_j (x+j)/(x+j+s)
        let mut shift = 0.0;
        let mut acc = 0.0;
        while x + shift + s.min(0.0) < 10.0 {
            acc -= (s / (x + shift)).ln_1p();
            shift += 1.0;
        }
        return acc + ln_gamma_ratio(x + shift, s);
    }
    // Bernoulli coefficients B_{2k} / (2k (2k-1))
    const C: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360360.0,
    ];
    let y = x + s;
    let lead = (y - 0.5) * (s / x).ln_1p() + s * x.ln() - s;
    let (iy, ix) = (1.0 / y, 1.0 / x);
    let (iy2, ix2) = (iy * iy, ix * ix);
    let (mut py, mut px) = (iy, ix);
    let mut series = 0.0;
    for c in C {
        series += c * (py - px);
        py *= iy2;
        px *= ix2;
    }
    lead + series
}

/// `Γ(x + s) / Γ(x)`, accurate to a few ulps even for large `x`.
pub fn gamma_ratio(x: f64, s: f64) -> Result<f64> {
    if !(x > 0.0) || !(x + s > 0.0) || !x.is_finite() || !s.is_finite() {
        return domain(format!("gamma_ratio requires x > 0 and x + s > 0, got x={x}, s={s}"));
    }
    if s.fract() == 0.0 && (0.0..=32.0).contains(&s) {
        // rising factorial, exact up to one rounding per factor
        return Ok((0..s as u32).map(|j| x + j as f64).product());
    }
    Ok(ln_gamma_ratio(x, s).exp())
}

/// `ln B(a, b)`.
#[inline]
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// Regularized incomplete beta function `I_z(a, b)`.
pub fn regularized_incomplete_beta(z: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return domain(format!("incomplete beta requires z in [0,1], got {z}"));
    }
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return domain(format!("incomplete beta requires a, b > 0, got a={a}, b={b}"));
    }
    Ok(inc_beta(z, a, b))
}

/// Unchecked `I_z(a, b)`; arguments must already be validated.
pub(crate) fn inc_beta(z: f64, a: f64, b: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z >= 1.0 {
        return 1.0;
    }
    let ln_front = a * z.ln() + b * (-z).ln_1p() - ln_beta(a, b);
    if z > (a + 1.0) / (a + b + 2.0) {
        let cf = beta_cf(1.0 - z, b, a);
        (1.0 - (ln_front.exp() * cf / b)).clamp(0.0, 1.0)
    } else {
        let cf = beta_cf(z, a, b);
        (ln_front.exp() * cf / a).clamp(0.0, 1.0)
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(z: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let tol = RealTolerance::default();
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * z / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=tol.max_iterations {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * z / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * z / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < tol.rel_tol {
            break;
        }
    }
    h
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Li_{-s}(u) = Σ_{k≥1} u^k k^s` for `s ∈ [0,1]`, `u ∈ [0,1)`.
pub fn polylog_neg(s: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return domain(format!("polylog_neg requires s in [0,1], got {s}"));
    }
    if !(0.0..1.0).contains(&u) {
        return domain(format!("polylog_neg requires u in [0,1), got {u}"));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut upow = 1.0;
    let mut k = 1u64;
    loop {
        upow *= u;
        let term = upow * (k as f64).powf(s);
        sum += term;
        // Terms decrease once k > s/(-ln u); only stop on the decreasing tail.
        if term < 1e-14 * sum && (k as f64) * (-u.ln()) > s {
            break;
        }
        k += 1;
    }
    Ok(sum)
}

/// `ln C(n, k)` for integers `0 ≤ k ≤ n`.
pub fn log_binomial(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return domain(format!("log_binomial requires k <= n, got n={n}, k={k}"));
    }
    Ok(ln_choose(n as f64, k as f64))
}

/// `ln C(n, k)` continued to real arguments, `0 ≤ k ≤ n`.
#[inline]
pub(crate) fn ln_choose(n: f64, k: f64) -> f64 {
    if k == 0.0 || k == n {
        return 0.0;
    }
    lgamma(n + 1.0) - lgamma(k + 1.0) - lgamma(n - k + 1.0)
}
