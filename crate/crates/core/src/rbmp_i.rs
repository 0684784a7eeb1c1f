//! Matching probabilities and cost moments for bipartite matching with i.i.d.
//! edge costs.
//!
//! Every routine taking an integer `n` has a `*_real` twin accepting a real
//! supply count, obtained by continuing the binomial and Gamma terms through
//! `ln Γ`. The mobility models use those with expected (non-integer) counts.

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::specfun::{inc_beta, lgamma, ln_beta, ln_choose, ln_gamma_ratio, normal_cdf};

/// Demand count `m` and supply count `n`, `1 ≤ m ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProblemSize {
    m: usize,
    n: usize,
}

impl ProblemSize {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return domain(format!("m and n must be positive, got m={m}, n={n}"));
        }
        if m > n {
            return contract(format!("need m <= n, got m={m}, n={n}"));
        }
        Ok(Self { m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Edge costs with CDF `(x/R)^D` on `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawCost {
    radius: f64,
    dim: u32,
}

impl PowerLawCost {
    pub fn new(radius: f64, dim: u32) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return domain(format!("radius must be positive, got {radius}"));
        }
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        Ok(Self { radius, dim })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (x / self.radius).clamp(0.0, 1.0).powi(self.dim as i32)
    }
}

/// Which construction produced a probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    GreedyExact,
    GreedyGeometric,
    Refined,
}

/// `P(k)`, the probability that a demand vertex ends up matched to its k-th
/// nearest supply vertex, `k = 1..m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingProbabilityVector {
    pub mode: ProbabilityMode,
    pub probs: Vec<f64>,
}

impl MatchingProbabilityVector {
    fn normalized(mode: ProbabilityMode, mut probs: Vec<f64>) -> Result<Self> {
        for p in probs.iter_mut() {
            if *p < 0.0 && *p > -1e-15 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        let drift = (sum - 1.0).abs();
        if !sum.is_finite() || drift > 1e-3 {
            return Err(Error::Numeric(format!("{mode:?} probabilities sum to {sum}")));
        }
        if drift > 1e-9 {
            tracing::debug!(?mode, sum, "renormalizing probability vector");
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self { mode, probs })
    }

    /// Mean rank `Σ k P(k)`.
    pub fn mean_rank(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }
}

/// `ln P̄(k|i)`: probability that the i-th greedy picker takes its k-th
/// nearest neighbor (negative hypergeometric), `1 ≤ k ≤ i`.
#[inline]
fn ln_greedy_given_order(k: usize, i: usize, n: f64) -> f64 {
    ln_choose(n - k as f64, (i - k) as f64) - ln_choose(n, (i - 1) as f64)
}

/// `P̄(k|i)` for `k = 1..i`.
pub fn greedy_prob_given_order(k: usize, i: usize, n: usize) -> Result<f64> {
    if k == 0 || k > i || i > n {
        return domain(format!("need 1 <= k <= i <= n, got k={k}, i={i}, n={n}"));
    }
    Ok(ln_greedy_given_order(k, i, n as f64).exp())
}

fn check_real_size(m: usize, n: f64) -> Result<()> {
    if m == 0 || !(n >= m as f64) || !n.is_finite() {
        return contract(format!("need 1 <= m <= n, got m={m}, n={n}"));
    }
    Ok(())
}

/// Greedy matching probabilities from the negative hypergeometric sum.
pub fn greedy_prob_exact(size: ProblemSize) -> Result<MatchingProbabilityVector> {
    greedy_prob_exact_real(size.m, size.n as f64)
}

pub fn greedy_prob_exact_real(m: usize, n: f64) -> Result<MatchingProbabilityVector> {
    check_real_size(m, n)?;
    let mut probs = vec![0.0; m];
    for i in 1..=m {
        for k in 1..=i {
            probs[k - 1] += ln_greedy_given_order(k, i, n).exp();
        }
    }
    probs.iter_mut().for_each(|p| *p /= m as f64);
    MatchingProbabilityVector::normalized(ProbabilityMode::GreedyExact, probs)
}

/// Large-n geometric limit of the greedy probabilities.
pub fn greedy_prob_geometric(size: ProblemSize) -> Result<MatchingProbabilityVector> {
    greedy_prob_geometric_real(size.m, size.n as f64)
}

pub fn greedy_prob_geometric_real(m: usize, n: f64) -> Result<MatchingProbabilityVector> {
    check_real_size(m, n)?;
    let mut probs = vec![0.0; m];
    for i in 1..=m {
        let u = (i - 1) as f64 / n;
        for k in 1..i {
            probs[k - 1] += u.powi(k as i32 - 1) * (1.0 - u);
        }
        probs[i - 1] += u.powi(i as i32 - 1);
    }
    probs.iter_mut().for_each(|p| *p /= m as f64);
    MatchingProbabilityVector::normalized(ProbabilityMode::GreedyGeometric, probs)
}

/// How the probability that one spacing undercuts another is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpacingModel {
    /// Normal approximation with the uniform (D = 1) spacing mean and variance.
    #[default]
    Normal,
    /// Exact Beta spacings of uniform costs, integrated numerically. Slow;
    /// meant for validating the normal approximation at D = 1.
    ExactUniform,
}

/// Swap-success probabilities `s(i, δk)` for `i ∈ 2..=m`, `δk ∈ 1..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapTable {
    m: usize,
    values: Vec<f64>,
}

impl SwapTable {
    pub fn m(&self) -> usize {
        self.m
    }

    /// `s(i, δk)`; `δk = 0` is the no-swap convention and returns 1.
    pub fn get(&self, i: usize, dk: usize) -> f64 {
        if dk == 0 {
            return 1.0;
        }
        debug_assert!((2..=self.m).contains(&i) && dk < self.m);
        self.values[(i - 2) * (self.m - 1) + dk - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Probability that a spacing spanning `dq` ranks is no larger than one
/// spanning `dk` ranks, normal approximation.
fn spacing_order_normal(dk: usize, dq: usize, n: f64) -> f64 {
    let (dk, dq) = (dk as f64, dq as f64);
    let var = dq * (n - dq + 1.0) + dk * (n - dk + 1.0);
    normal_cdf((dk - dq) * (n + 2.0).sqrt() / var.sqrt())
}

/// Same probability with independent exact `Beta(δ, n−δ+1)` spacings.
fn spacing_order_exact(dk: usize, dq: usize, n: f64) -> Result<f64> {
    let (a_k, b_k) = (dk as f64, n - dk as f64 + 1.0);
    let (a_q, b_q) = (dq as f64, n - dq as f64 + 1.0);
    let ln_b = ln_beta(a_k, b_k);
    let dens = |y: f64| {
        if y <= 0.0 || y >= 1.0 {
            return 0.0;
        }
        ((a_k - 1.0) * y.ln() + (b_k - 1.0) * (-y).ln_1p() - ln_b).exp()
    };
    integrate(|y| inc_beta(y, a_q, b_q) * dens(y), 0.0, 1.0, QuadOptions { initial_panels: 32, ..Default::default() })
}

/// Builds the swap-success table with the normal spacing approximation.
pub fn swap_success_table(size: ProblemSize) -> Result<SwapTable> {
    swap_success_table_with(size.m, size.n as f64, SpacingModel::Normal)
}

pub fn swap_success_table_with(m: usize, n: f64, model: SpacingModel) -> Result<SwapTable> {
    check_real_size(m, n)?;
    if m < 2 {
        return domain("swap table needs m >= 2");
    }
    // prefix[dq][j] = Σ_{q''=1}^{j} w(q'', q''+dq), j = 0..=m-dq
    let mf = m as f64;
    let prefix: Vec<Vec<f64>> = (0..m)
        .map(|dq| {
            if dq == 0 {
                return Vec::new();
            }
            let mut acc = vec![0.0; m - dq + 1];
            for q2 in 1..=m - dq {
                let q1 = q2 + dq;
                let (q1f, q2f) = (q1 as f64, q2 as f64);
                let lw = ln_choose(n - q1f, mf - q1f) - ln_choose(n - q2f, mf - q2f - 1.0);
                acc[q2] = acc[q2 - 1] + lw.exp();
            }
            acc
        })
        .collect();
    let mut phi = vec![0.0; m * m];
    for dk in 1..m {
        for dq in 1..m {
            phi[dk * m + dq] = match model {
                SpacingModel::Normal => spacing_order_normal(dk, dq, n),
                SpacingModel::ExactUniform => spacing_order_exact(dk, dq, n)?,
            };
        }
    }
    let mut values = Vec::with_capacity((m - 1) * (m - 1));
    for i in 2..=m {
        for dk in 1..m {
            let mut s = 0.0;
            for dq in 1..m {
                let j = (i - 1).min(m - dq);
                s += prefix[dq][j] * phi[dk * m + dq];
            }
            values.push((s / (i - 1) as f64).clamp(0.0, 1.0));
        }
    }
    Ok(SwapTable { m, values })
}

/// Refined matching probabilities after vertex swapping.
pub fn refined_prob(size: ProblemSize) -> Result<MatchingProbabilityVector> {
    refined_prob_real(size.m, size.n as f64)
}

pub fn refined_prob_real(m: usize, n: f64) -> Result<MatchingProbabilityVector> {
    refined_prob_with(m, n, SpacingModel::Normal)
}

pub fn refined_prob_with(m: usize, n: f64, model: SpacingModel) -> Result<MatchingProbabilityVector> {
    check_real_size(m, n)?;
    if m == 1 {
        return MatchingProbabilityVector::normalized(ProbabilityMode::Refined, vec![1.0]);
    }
    let table = swap_success_table_with(m, n, model)?;
    let mut probs = vec![0.0; m];
    probs[0] += 1.0; // i = 1 always takes its nearest neighbor
    let mut ln_keep = vec![0.0; m];
    let mut greedy = vec![0.0; m + 1];
    for i in 2..=m {
        // ln_keep[j] = Σ_{δ=1}^{j} ln(1 − s(i, δ))
        for j in 1..i {
            let s = table.get(i, j).min(1.0 - 1e-15);
            ln_keep[j] = ln_keep[j - 1] + (-s).ln_1p();
        }
        for kp in 1..=i {
            greedy[kp] = ln_greedy_given_order(kp, i, n).exp();
        }
        for k in 1..=i {
            let mut acc = 0.0;
            for kp in k..=i {
                let gap = kp - k;
                acc += greedy[kp] * table.get(i, gap) * (ln_keep[kp - 1] - ln_keep[gap]).exp();
            }
            probs[k - 1] += acc;
        }
    }
    probs.iter_mut().for_each(|p| *p /= m as f64);
    MatchingProbabilityVector::normalized(ProbabilityMode::Refined, probs)
}

/// Closed-form `E[C^M | k]` under power-law costs.
pub fn conditional_moment_powerlaw(k: usize, size: ProblemSize, moment: u32, cost: PowerLawCost) -> Result<f64> {
    if k == 0 || k > size.n {
        return domain(format!("need 1 <= k <= n, got k={k}, n={}", size.n));
    }
    Ok(powerlaw_moment_real(k as f64, size.n as f64, moment, cost))
}

#[inline]
pub(crate) fn powerlaw_moment_real(k: f64, n: f64, moment: u32, cost: PowerLawCost) -> f64 {
    let s = moment as f64 / cost.dim as f64;
    (ln_gamma_ratio(k, s) - ln_gamma_ratio(n + 1.0, s)).exp() * cost.radius.powi(moment as i32)
}

/// `E[C^M | k]` for an arbitrary cost CDF supported on `[lo, hi]`, by
/// adaptive quadrature of `∫ M x^{M-1} (1 − I_{F(x)}(k, n−k+1)) dx`.
pub fn conditional_moment_numeric<F>(k: usize, n: usize, moment: u32, cdf: F, support: (f64, f64)) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = support;
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got k={k}, n={n}"));
    }
    if moment == 0 {
        return domain("moment order must be positive");
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Input(format!("invalid support [{lo}, {hi}]")));
    }
    check_cdf(&cdf, lo, hi)?;
    let (a, b) = (k as f64, (n - k + 1) as f64);
    let mf = moment as f64;
    let tail = integrate(
        |x| {
            let f = cdf(x).clamp(0.0, 1.0);
            mf * x.powi(moment as i32 - 1) * (1.0 - inc_beta(f, a, b))
        },
        lo,
        hi,
        QuadOptions { rel_tol: 1e-10, initial_panels: 32, ..Default::default() },
    )?;
    Ok(lo.powi(moment as i32) + tail)
}

pub(crate) fn check_cdf<F: Fn(f64) -> f64>(cdf: &F, lo: f64, hi: f64) -> Result<()> {
    const SAMPLES: usize = 512;
    let mut prev = f64::NEG_INFINITY;
    for j in 0..=SAMPLES {
        let x = lo + (hi - lo) * j as f64 / SAMPLES as f64;
        let f = cdf(x);
        if !f.is_finite() || f < prev - 1e-12 || !(-1e-12..=1.0 + 1e-12).contains(&f) {
            return Err(Error::Input(format!("cdf is not a monotone map into [0,1] near x={x}")));
        }
        prev = f;
    }
    if cdf(lo).abs() > 1e-9 || (cdf(hi) - 1.0).abs() > 1e-9 {
        return Err(Error::Input("cdf must be 0 at the lower and 1 at the upper support end".into()));
    }
    Ok(())
}

/// Estimator modes shared by the three variants.
///
/// Serialized as the lowercase names printed by `Display`, e.g. `"kappa0"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimateMode {
    Nearest,
    Greedy,
    Refined,
    RefinedCorrected,
    Kappa(u32),
}

impl std::fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateMode::Nearest => f.write_str("nearest"),
            EstimateMode::Greedy => f.write_str("greedy"),
            EstimateMode::Refined => f.write_str("refined"),
            EstimateMode::RefinedCorrected => f.write_str("refined_corrected"),
            EstimateMode::Kappa(k) => write!(f, "kappa{k}"),
        }
    }
}

impl std::str::FromStr for EstimateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "nearest" => Ok(EstimateMode::Nearest),
            "greedy" => Ok(EstimateMode::Greedy),
            "refined" => Ok(EstimateMode::Refined),
            "refined_corrected" => Ok(EstimateMode::RefinedCorrected),
            _ => s
                .strip_prefix("kappa")
                .and_then(|k| k.parse().ok())
                .map(EstimateMode::Kappa)
                .ok_or_else(|| Error::Input(format!("unknown estimate mode {s:?}"))),
        }
    }
}

impl TryFrom<String> for EstimateMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimateMode> for String {
    fn from(m: EstimateMode) -> String {
        m.to_string()
    }
}

/// An estimate with the ingredients that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    pub mode: EstimateMode,
    pub moment: u32,
    pub delta_s: Option<f64>,
    pub delta_b: Option<f64>,
}

impl EstimateResult {
    pub(crate) fn plain(value: f64, mode: EstimateMode, moment: u32) -> Self {
        Self { value, mode, moment, delta_s: None, delta_b: None }
    }
}

/// `Σ_k E[C^M|k] P(k)` under power-law costs.
pub fn expected_cost_with(probs: &MatchingProbabilityVector, n: f64, moment: u32, cost: PowerLawCost) -> f64 {
    probs
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| p * powerlaw_moment_real((i + 1) as f64, n, moment, cost))
        .sum()
}

/// Expected per-vertex `M`-th cost moment under greedy, refined or nearest
/// matching. Nearest is the exact first-order-statistic moment.
pub fn expected_cost(size: ProblemSize, cost: PowerLawCost, moment: u32, mode: EstimateMode) -> Result<EstimateResult> {
    if moment == 0 {
        return domain("moment order must be positive");
    }
    let n = size.n as f64;
    let value = match mode {
        EstimateMode::Nearest => powerlaw_moment_real(1.0, n, moment, cost),
        EstimateMode::Greedy => expected_cost_with(&greedy_prob_exact(size)?, n, moment, cost),
        EstimateMode::Refined => expected_cost_with(&refined_prob(size)?, n, moment, cost),
        EstimateMode::Kappa(k) if moment == 1 => kappa_approx_greedy_cost(size, cost, k)?,
        other => return domain(format!("mode {other} is not available for i.i.d. costs with moment {moment}")),
    };
    Ok(EstimateResult::plain(value, mode, moment))
}

/// κ-approximation of the greedy cost: Gamma ratios `Γ(z+1/D)/Γ(z)` are kept
/// for `z ≤ κ` and replaced by `z^{1/D}` above.
pub fn kappa_approx_greedy_cost(size: ProblemSize, cost: PowerLawCost, kappa: u32) -> Result<f64> {
    if kappa as usize > size.m {
        return domain(format!("kappa must lie in 0..=m, got {kappa} with m={}", size.m));
    }
    kappa_approx_real(size.m as f64, size.n as f64, cost, kappa)
}

/// Real-argument κ-approximation. A fractional demand count `m` contributes
/// the fractional share of the next picker position, which keeps the value
/// continuous in `m`.
pub fn kappa_approx_real(m: f64, n: f64, cost: PowerLawCost, kappa: u32) -> Result<f64> {
    if !(m >= 1.0) || !(n >= m) || !n.is_finite() {
        return contract(format!("need 1 <= m <= n, got m={m}, n={n}"));
    }
    let s = 1.0 / cost.dim as f64;
    let g = |z: usize| {
        if z as u32 <= kappa {
            ln_gamma_ratio(z as f64, s).exp()
        } else {
            (z as f64).powf(s)
        }
    };
    let whole = m.floor() as usize;
    let frac = m - whole as f64;
    let positions = if frac > 0.0 { whole + 1 } else { whole };
    let mut g_cache = Vec::with_capacity(positions + 1);
    g_cache.push(0.0);
    for z in 1..=positions {
        g_cache.push(g(z));
    }
    let mut total = 0.0;
    for i in 1..=positions {
        let u = (i - 1) as f64 / n;
        let mut term = 0.0;
        let mut upow = 1.0;
        for k in 1..=i {
            term += upow * (1.0 - u) * g_cache[k];
            upow *= u;
        }
        term += upow * g_cache[i];
        total += if i > whole { frac * term } else { term };
    }
    Ok(cost.radius * total / (m * n.powf(s)))
}

/// Upper bound on the relative gap between greedy and nearest costs.
pub fn greedy_nearest_gap_bound(size: ProblemSize, dim: u32) -> Result<f64> {
    if size.m >= size.n {
        return domain("gap bound is singular for m >= n");
    }
    if dim == 0 {
        return domain("dimension must be at least 1");
    }
    let r = size.m as f64 / size.n as f64;
    let ln_term = -(-r).ln_1p() / r;
    Ok((ln_term - 1.0) / (lgamma(1.0 + 1.0 / dim as f64)).exp())
}

/// Sweep-friendly gap bound: `(+∞, true)` at the singular point `m = n`.
pub fn gap_bound_for_sweep(size: ProblemSize, dim: u32) -> Result<(f64, bool)> {
    if size.m == size.n {
        return Ok((f64::INFINITY, true));
    }
    greedy_nearest_gap_bound(size, dim).map(|b| (b, false))
}

/// Density of the spacing between the i-th and j-th order statistics of `n`
/// i.i.d. costs with CDF `cdf` and density `pdf` on `[lo, hi]`, at `y ≥ 0`.
/// Slow numerical reference.
pub fn spacing_density<F, P>(i: usize, j: usize, n: usize, y: f64, cdf: F, pdf: P, support: (f64, f64)) -> Result<f64>
where
    F: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    if !(1 <= i && i < j && j <= n) {
        return domain(format!("need 1 <= i < j <= n, got i={i}, j={j}, n={n}"));
    }
    let (lo, hi) = support;
    if y < 0.0 || y > hi - lo {
        return Ok(0.0);
    }
    let ln_c = lgamma(n as f64 + 1.0) - lgamma(i as f64) - lgamma((j - i) as f64) - lgamma((n - j + 1) as f64);
    let (a, b, c) = ((i - 1) as i32, (j - i - 1) as i32, (n - j) as i32);
    integrate(
        |x| {
            let fx = cdf(x);
            let fy = cdf(x + y);
            fx.powi(a) * (fy - fx).max(0.0).powi(b) * (1.0 - fy).max(0.0).powi(c) * pdf(x) * pdf(x + y)
        },
        lo,
        hi - y,
        QuadOptions { initial_panels: 32, ..Default::default() },
    )
    .map(|v| v * ln_c.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn size(m: usize, n: usize) -> ProblemSize {
        ProblemSize::new(m, n).unwrap()
    }

    fn unit(dim: u32) -> PowerLawCost {
        PowerLawCost::new(1.0, dim).unwrap()
    }

    #[test]
    fn greedy_exact_small() {
        assert_eq!(greedy_prob_exact(size(1, 5)).unwrap().probs, vec![1.0]);
        let p = greedy_prob_exact(size(2, 2)).unwrap().probs;
        assert_relative_eq!(p[0], 0.75, epsilon = 1e-14);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-14);
        let s: f64 = greedy_prob_exact(size(3, 3)).unwrap().probs.iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert!(ProblemSize::new(4, 3).is_err());
    }

    #[test]
    fn geometric_limit() {
        let p = greedy_prob_geometric(size(2, 1000)).unwrap().probs;
        assert_relative_eq!(p[0], 0.9995, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.0005, epsilon = 1e-12);
        let e = greedy_prob_exact(size(2, 1000)).unwrap().probs;
        assert!((p[0] - e[0]).abs() < 1e-6);
        let g = greedy_prob_geometric(size(10, 100)).unwrap().probs;
        let e = greedy_prob_exact(size(10, 100)).unwrap().probs;
        for (a, b) in g.iter().zip(&e) {
            assert!((a - b).abs() <= 0.01);
        }
    }

    #[test]
    fn greedy_urn_matches_negative_hypergeometric() {
        // Picker i draws ranks among n supply vertices; the first i-1 pickers
        // occupy a uniformly random subset under the i.i.d. model.
        let (m, n) = (6usize, 6usize);
        let trials = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![vec![0usize; m + 1]; m + 1];
        for _ in 0..trials {
            let mut taken = vec![false; n];
            for i in 1..=m {
                // the picker's rank order is an independent uniform permutation
                let mut order: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                let rank = order.iter().position(|&v| !taken[v]).unwrap();
                taken[order[rank]] = true;
                counts[i][rank + 1] += 1;
            }
        }
        for i in 1..=m {
            for k in 1..=i {
                let p = greedy_prob_given_order(k, i, n).unwrap();
                let freq = counts[i][k] as f64 / trials as f64;
                let se = (p * (1.0 - p) / trials as f64).sqrt().max(1e-9);
                assert!((freq - p).abs() <= 3.0 * se + 1e-12, "i={i} k={k} p={p} freq={freq}");
            }
        }
    }

    #[test]
    fn swap_table_hand_case() {
        let t = swap_success_table(size(2, 2)).unwrap();
        assert_relative_eq!(t.get(2, 1), 0.5, epsilon = 1e-15);
        let t = swap_success_table(size(5, 10)).unwrap();
        assert!(t.values().iter().all(|s| (0.0..=1.0).contains(s)));
        assert_eq!(t.get(3, 0), 1.0);
    }

    #[test]
    fn swap_weights_sum_to_one() {
        // For every q'' the weights over q' form a first-failure distribution.
        let (m, n) = (12usize, 30.0);
        for q2 in 1..m {
            let s: f64 = (q2 + 1..=m)
                .map(|q1| {
                    let (a, b) = (q1 as f64, q2 as f64);
                    (ln_choose(n - a, m as f64 - a) - ln_choose(n - b, m as f64 - b - 1.0)).exp()
                })
                .sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn refined_examples() {
        assert_eq!(refined_prob(size(1, 40)).unwrap().probs, vec![1.0]);
        let r = refined_prob(size(10, 10)).unwrap().probs;
        let g = greedy_prob_exact(size(10, 10)).unwrap().probs;
        assert!(r[0] > g[0]);
        // Refinement only moves mass toward nearer ranks: the refined CDF
        // dominates the greedy one.
        let r = refined_prob(size(10, 30)).unwrap().probs;
        let g = greedy_prob_exact(size(10, 30)).unwrap().probs;
        let (mut cr, mut cg) = (0.0, 0.0);
        for (a, b) in r.iter().zip(&g) {
            cr += a;
            cg += b;
            assert!(cr >= cg - 1e-12);
        }
    }

    /// Reference O(m⁵) evaluation straight from the definition.
    fn refined_naive(m: usize, n: usize) -> Vec<f64> {
        let nf = n as f64;
        let mf = m as f64;
        let s = |kp: usize, kpp: usize, i: usize| -> f64 {
            if kp == kpp {
                return 1.0;
            }
            let mut acc = 0.0;
            for q2 in 1..i {
                for q1 in q2 + 1..=m {
                    let (a, b) = (q1 as f64, q2 as f64);
                    let w = (ln_choose(nf - a, mf - a) - ln_choose(nf - b, mf - b - 1.0)).exp();
                    acc += w * spacing_order_normal(kp - kpp, q1 - q2, nf);
                }
            }
            acc / (i - 1) as f64
        };
        let mut p = vec![0.0; m];
        for k in 1..=m {
            for i in k..=m {
                for kp in k..=i {
                    let mut prod = 1.0;
                    for kpp in 1..k {
                        prod *= 1.0 - s(kp, kpp, i);
                    }
                    p[k - 1] += ln_greedy_given_order(kp, i, nf).exp() * s(kp, k, i) * prod;
                }
            }
            p[k - 1] /= mf;
        }
        p
    }

    #[test]
    fn refined_factorization_matches_definition() {
        for (m, n) in [(2, 2), (4, 6), (7, 7), (8, 15)] {
            let fast = refined_prob(size(m, n)).unwrap().probs;
            let naive = refined_naive(m, n);
            for (a, b) in fast.iter().zip(&naive) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exact_spacing_mode_is_close_to_normal() {
        let a = refined_prob_with(8, 12.0, SpacingModel::Normal).unwrap().probs;
        let b = refined_prob_with(8, 12.0, SpacingModel::ExactUniform).unwrap().probs;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 0.03, "{x} vs {y}");
        }
    }

    #[test]
    fn spacing_density_uniform_is_beta() {
        // Uniform spacings: Δ_{i,j} ~ Beta(j-i, n-j+i+1)
        let (i, j, n) = (2usize, 5usize, 9usize);
        let (a, b) = ((j - i) as f64, (n - j + i + 1) as f64);
        for y in [0.05, 0.2, 0.45, 0.8] {
            let got = spacing_density(i, j, n, y, |x| x.clamp(0.0, 1.0), |_| 1.0, (0.0, 1.0)).unwrap();
            let want = ((a - 1.0) * f64::ln(y) + (b - 1.0) * f64::ln(1.0 - y) - ln_beta(a, b)).exp();
            assert_relative_eq!(got, want, max_relative = 1e-8);
        }
    }

    #[test]
    fn powerlaw_moments() {
        let c = unit(1);
        assert_relative_eq!(conditional_moment_powerlaw(1, size(1, 1), 1, c).unwrap(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(conditional_moment_powerlaw(2, size(3, 3), 1, c).unwrap(), 0.5, epsilon = 1e-14);
        // mpmath: gamma(101)*gamma(1.5)/gamma(101.5)
        assert_relative_eq!(
            conditional_moment_powerlaw(1, size(1, 100), 1, unit(2)).unwrap(),
            0.0882920793175656786,
            max_relative = 1e-12
        );
        for n in [1usize, 7, 50] {
            for k in 1..=n {
                let v = conditional_moment_powerlaw(k, size(1, n), 1, c).unwrap();
                assert_relative_eq!(v, k as f64 / (n + 1) as f64, max_relative = 1e-12);
            }
        }
        assert!(conditional_moment_powerlaw(5, size(1, 4), 1, c).is_err());
    }

    #[test]
    fn numeric_moments_match_closed_form() {
        let uni = |x: f64| x.clamp(0.0, 1.0);
        assert_relative_eq!(conditional_moment_numeric(1, 1, 1, uni, (0.0, 1.0)).unwrap(), 0.5, max_relative = 1e-10);
        assert_relative_eq!(conditional_moment_numeric(9, 9, 1, uni, (0.0, 1.0)).unwrap(), 0.9, max_relative = 1e-10);
        let c = PowerLawCost::new(0.7, 2).unwrap();
        for (k, n, mm) in [(1, 1, 1), (1, 50, 1), (7, 50, 2), (30, 60, 3), (200, 300, 1)] {
            let num = conditional_moment_numeric(k, n, mm, |x| c.cdf(x), (0.0, 0.7)).unwrap();
            let exact = conditional_moment_powerlaw(k, size(1, n), mm, c).unwrap();
            assert_relative_eq!(num, exact, max_relative = 1e-7);
        }
        let bumpy = |x: f64| if x < 0.5 { x } else { 1.0 - x };
        assert!(matches!(conditional_moment_numeric(1, 3, 1, bumpy, (0.0, 1.0)), Err(Error::Input(_))));
    }

    #[test]
    fn estimator_examples() {
        let c = unit(2);
        let s = size(1, 100);
        let vals: Vec<f64> = [EstimateMode::Greedy, EstimateMode::Refined, EstimateMode::Nearest]
            .iter()
            .map(|&md| expected_cost(s, c, 1, md).unwrap().value)
            .collect();
        for v in &vals {
            assert_relative_eq!(*v, 0.0882920793175656786, max_relative = 1e-12);
        }
        let c1 = unit(1);
        let g = expected_cost(size(10, 10), c1, 1, EstimateMode::Greedy).unwrap().value;
        let r = expected_cost(size(10, 10), c1, 1, EstimateMode::Refined).unwrap().value;
        let nn = expected_cost(size(10, 10), c1, 1, EstimateMode::Nearest).unwrap().value;
        assert!(g >= r && r >= nn);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [EstimateMode::Nearest, EstimateMode::Greedy, EstimateMode::Refined, EstimateMode::RefinedCorrected, EstimateMode::Kappa(3)] {
            assert_eq!(m.to_string().parse::<EstimateMode>().unwrap(), m);
        }
        assert!("kappa".parse::<EstimateMode>().is_err());
        assert!("best".parse::<EstimateMode>().is_err());
    }

    #[test]
    fn kappa_examples() {
        for d in 1..=4 {
            let c = unit(d);
            let v = kappa_approx_greedy_cost(size(1, 37), c, 1).unwrap();
            let want = (lgamma(1.0 + 1.0 / d as f64)).exp() * 37f64.powf(-1.0 / d as f64);
            assert_relative_eq!(v, want, max_relative = 1e-13);
        }
        let c = unit(2);
        let e0 = kappa_approx_greedy_cost(size(10, 30), c, 0).unwrap();
        let em = kappa_approx_greedy_cost(size(10, 30), c, 10).unwrap();
        assert!(e0 >= em);
        // Moving from κ=1 to κ=m changes little.
        let e1 = kappa_approx_greedy_cost(size(10, 100), c, 1).unwrap();
        let em = kappa_approx_greedy_cost(size(10, 100), c, 10).unwrap();
        assert!((e1 - em).abs() / em <= 0.01);
    }

    #[test]
    fn kappa_real_extension_is_continuous() {
        let c = unit(2);
        for m in 1..20usize {
            let at = kappa_approx_real(m as f64, 60.0, c, 0).unwrap();
            let below = kappa_approx_real(m as f64 - 1e-9, 60.0, c, 0).unwrap_or(at);
            let above = kappa_approx_real(m as f64 + 1e-9, 60.0, c, 0).unwrap();
            assert!((at - below).abs() < 1e-7 && (at - above).abs() < 1e-7);
            let int = kappa_approx_greedy_cost(size(m, 60), c, 0).unwrap();
            assert_relative_eq!(at, int, max_relative = 1e-14);
        }
    }

    #[test]
    fn gap_bound_values() {
        assert_relative_eq!(
            greedy_nearest_gap_bound(size(10, 100), 2).unwrap(),
            0.0604869419318046762,
            max_relative = 1e-12
        );
        assert!(greedy_nearest_gap_bound(size(1, 1_000_000), 2).unwrap() < 1e-6);
        assert!(greedy_nearest_gap_bound(size(5, 5), 2).is_err());
        assert_eq!(gap_bound_for_sweep(size(5, 5), 2).unwrap(), (f64::INFINITY, true));
    }

    #[test]
    fn convergence_bound_on_grid() {
        for m in 1..=15usize {
            let n = 20 * m;
            for d in 1..=3 {
                let c = unit(d);
                let g = expected_cost(size(m, n), c, 1, EstimateMode::Greedy).unwrap().value;
                let nn = expected_cost(size(m, n), c, 1, EstimateMode::Nearest).unwrap().value;
                let b = greedy_nearest_gap_bound(size(m, n), d).unwrap();
                assert!((g - nn) / nn <= b, "m={m} D={d}: {} > {b}", (g - nn) / nn);
            }
        }
    }

    #[test]
    fn normalization_and_ordering_grid() {
        for m in 1..=50usize {
            for n in (m..=3 * m).step_by((m / 4).max(1)) {
                let s = size(m, n);
                for v in [greedy_prob_exact(s), greedy_prob_geometric(s), refined_prob(s)] {
                    let v = v.unwrap();
                    let sum: f64 = v.probs.iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-9);
                    assert!(v.probs.iter().all(|p| (0.0..=1.0).contains(p)));
                }
                let c = unit(2);
                let g = expected_cost(s, c, 1, EstimateMode::Greedy).unwrap().value;
                let r = expected_cost(s, c, 1, EstimateMode::Refined).unwrap().value;
                let nn = expected_cost(s, c, 1, EstimateMode::Nearest).unwrap().value;
                assert!(g >= r - 1e-9 && r >= nn - 1e-9, "m={m} n={n}");
            }
        }
    }

    proptest! {
        #[test]
        fn kappa_monotone(m in 1usize..25, extra in 0usize..40, d in 1u32..6) {
            let s = size(m, m + extra);
            let c = unit(d);
            let mut prev = f64::INFINITY;
            for k in 0..=m as u32 {
                let v = kappa_approx_greedy_cost(s, c, k).unwrap();
                prop_assert!(v <= prev * (1.0 + 1e-13), "k={k} v={v} prev={prev}");
                prev = v;
            }
            let geo = expected_cost_with(&greedy_prob_geometric(s).unwrap(), s.n() as f64, 1, c);
            prop_assert!(prev >= geo - 1e-12);
        }

        #[test]
        fn powerlaw_moment_increasing(n in 2usize..300, d in 1u32..8, mm in 1u32..4) {
            let c = unit(d);
            let mut prev = 0.0;
            for k in 1..=n {
                let v = powerlaw_moment_real(k as f64, n as f64, mm, c);
                prop_assert!(v > prev);
                prev = v;
            }
        }

        #[test]
        fn real_n_probabilities_normalized(m in 1usize..30, extra in 0.0f64..50.0) {
            let n = m as f64 + extra;
            for v in [greedy_prob_exact_real(m, n), refined_prob_real(m, n)] {
                let s: f64 = v.unwrap().probs.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }
}
