//! Vectorized order-statistic means.
//!
//! For an i.i.d. sample of size `n` with CDF `F`, the k-th smallest value has
//! survival function `P(Bin(n, F(x)) ≤ k − 1)`. Evaluating the binomial CDF
//! for all `k ≤ k_max` at once costs `O(k_max)` per abscissa, so the means of
//! every order statistic come out of a single vector-valued quadrature.

use crate::error::Result;
use crate::quad::{integrate_vec, QuadOptions};
use crate::specfun::ln_choose;

/// Fills `out[k-1] = P(Bin(n, f) ≤ k − 1)` for `k = 1..=out.len()`.
/// `ln_binom[j]` must hold `ln C(n, j)`.
pub(crate) fn binomial_cdf_prefix(n: usize, f: f64, ln_binom: &[f64], out: &mut [f64]) {
    if f <= 0.0 {
        out.fill(1.0);
        return;
    }
    if f >= 1.0 {
        out.fill(0.0);
        return;
    }
    let (lf, lg) = (f.ln(), (-f).ln_1p());
    let mut acc = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        acc += (ln_binom[j] + j as f64 * lf + (n - j) as f64 * lg).exp();
        *o = acc.min(1.0);
    }
}

pub(crate) fn ln_binomials(n: usize, upto: usize) -> Vec<f64> {
    (0..upto).map(|j| ln_choose(n as f64, j as f64)).collect()
}

/// `E[X_(k)]` for `k = 1..=k_max` when `X ≥ lo` has CDF `cdf` on `[lo, hi]`.
/// `breaks` are interior points where the CDF has kinks.
pub(crate) fn order_statistic_means<F>(
    n: usize,
    k_max: usize,
    cdf: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    let ln_binom = ln_binomials(n, k_max);
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    edges.push(hi);
    let mut total = vec![lo; k_max];
    for w in edges.windows(2) {
        let part = integrate_vec(
            |x, out| binomial_cdf_prefix(n, cdf(x), &ln_binom, out),
            k_max,
            w[0],
            w[1],
            opts,
        )?;
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    Ok(total)
}
