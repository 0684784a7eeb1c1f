//! Matching distances on the unit-area hypersphere with great-circle metric.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::orderstat::order_statistic_means;
use crate::quad::QuadOptions;
use crate::rbmp_i::{
    conditional_moment_numeric, greedy_prob_exact, refined_prob, EstimateMode, EstimateResult,
    MatchingProbabilityVector, ProblemSize,
};
use crate::specfun::{inc_beta, lgamma};

/// Imbalance exponent in the correction factors.
pub const IMBALANCE_EXPONENT: i32 = 3;

/// Large-size relative excess of sphere over i.i.d. matching cost for
/// `D = 3..=10`.
pub const ASYMPTOTIC_SPHERE_EXCESS: [f64; 8] = [0.0831, 0.0315, 0.0146, 0.0078, 0.0042, 0.0024, 0.0014, 0.0013];

/// Unit-area `D`-sphere. `max_distance` is the antipodal great-circle distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereGeometry {
    pub dim: u32,
    pub max_distance: f64,
}

impl SphereGeometry {
    /// Radius of the embedding sphere in `R^{D+1}`.
    pub fn embedding_radius(&self) -> f64 {
        self.max_distance / PI
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.max_distance);
        match self.dim {
            1 => x / self.max_distance,
            2 => 0.5 * (1.0 - (PI * x / self.max_distance).cos()),
            d => {
                let half = 0.5 * d as f64;
                let s = (0.5 * PI * x / self.max_distance).sin();
                inc_beta(s * s, half, half)
            }
        }
    }

    /// Uniform point on the sphere, as coordinates in `R^{D+1}`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let rho = self.embedding_radius();
        loop {
            let v: Vec<f64> = (0..=self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-300 {
                return v.into_iter().map(|x| rho * x / norm).collect();
            }
        }
    }

    /// Great-circle distance between two points produced by [`Self::sample_point`].
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let rho = self.embedding_radius();
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (rho * rho);
        rho * dot.clamp(-1.0, 1.0).acos()
    }
}

pub fn sphere_geometry(dim: u32) -> Result<SphereGeometry> {
    if dim == 0 {
        return domain("sphere dimension must be at least 1");
    }
    let d = dim as f64;
    let ln_inner = lgamma(0.5 * (d + 1.0)) - 2f64.ln() - 0.5 * (d + 1.0) * PI.ln();
    Ok(SphereGeometry { dim, max_distance: PI * (ln_inner / d).exp() })
}

/// CDF of the great-circle distance between two uniform points.
pub fn pair_distance_cdf(x: f64, dim: u32) -> Result<f64> {
    let g = sphere_geometry(dim)?;
    if !(0.0..=g.max_distance).contains(&x) {
        return domain(format!("x must lie in [0, {}], got {x}", g.max_distance));
    }
    Ok(g.cdf(x))
}

/// Mean distance from a vertex to its k-th nearest of `n` uniform points.
pub fn conditional_distance_s(k: usize, n: usize, dim: u32) -> Result<f64> {
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got k={k}, n={n}"));
    }
    let g = sphere_geometry(dim)?;
    if dim == 1 {
        return Ok(k as f64 / (2 * (n + 1)) as f64);
    }
    conditional_moment_numeric(k, n, 1, |x| g.cdf(x), (0.0, g.max_distance))
}

/// `E[C_S | k]` for every `k = 1..=k_max` at once.
pub fn conditional_distances_s(n: usize, k_max: usize, dim: u32) -> Result<Vec<f64>> {
    if k_max == 0 || k_max > n {
        return domain(format!("need 1 <= k_max <= n, got k_max={k_max}, n={n}"));
    }
    let g = sphere_geometry(dim)?;
    if dim == 1 {
        return Ok((1..=k_max).map(|k| k as f64 / (2 * (n + 1)) as f64).collect());
    }
    let opts = QuadOptions { rel_tol: 1e-9, initial_panels: 16, ..Default::default() };
    order_statistic_means(n, k_max, |x| g.cdf(x), 0.0, g.max_distance, &[], opts)
}

/// `δ = β (m/n)^3 / D²` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFactor {
    pub value: f64,
    pub beta: f64,
    pub imbalance: f64,
    pub dimension: f64,
}

impl CorrectionFactor {
    pub(crate) fn new(beta: f64, size: ProblemSize, dim: u32) -> Self {
        let imbalance = (size.m() as f64 / size.n() as f64).powi(IMBALANCE_EXPONENT);
        let dimension = 1.0 / (dim as f64 * dim as f64);
        Self { value: beta * imbalance * dimension, beta, imbalance, dimension }
    }
}

fn beta_cache() -> &'static RwLock<HashMap<usize, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Balanced one-dimensional calibration: makes the corrected `(n, n)` ring
/// estimate equal `¼√(π/2)·n^{-1/2}`.
pub fn sphere_beta_1d(n: usize) -> Result<f64> {
    if n == 0 {
        return domain("n must be positive");
    }
    if let Some(b) = beta_cache().read().ok().and_then(|c| c.get(&n).copied()) {
        return Ok(b);
    }
    let p = refined_prob(ProblemSize::new(n, n)?)?;
    let nf = n as f64;
    let target = 0.25 * (PI / 2.0).sqrt() / nf.sqrt() * (nf + 1.0);
    let beta = target / (0.5 * p.mean_rank()) - 1.0;
    if let Ok(mut c) = beta_cache().write() {
        c.insert(n, beta);
    }
    Ok(beta)
}

/// Table value of the asymptotic excess for `D ≥ 3`; zero beyond the table.
pub fn asymptotic_sphere_excess(dim: u32) -> f64 {
    match dim {
        3..=10 => ASYMPTOTIC_SPHERE_EXCESS[dim as usize - 3],
        _ => 0.0,
    }
}

/// `β_S(n, D)`.
pub fn sphere_beta(n: usize, dim: u32) -> Result<f64> {
    let high = |d: u32| asymptotic_sphere_excess(d) * (d * d) as f64;
    match dim {
        0 => domain("dimension must be at least 1"),
        1 => sphere_beta_1d(n),
        2 => Ok(0.5 * (sphere_beta_1d(n)? + high(3))),
        d => Ok(high(d)),
    }
}

pub fn correction_delta_s(size: ProblemSize, dim: u32) -> Result<CorrectionFactor> {
    Ok(CorrectionFactor::new(sphere_beta(size.n(), dim)?, size, dim))
}

fn mix(means: &[f64], probs: &MatchingProbabilityVector) -> f64 {
    means.iter().zip(&probs.probs).map(|(e, p)| e * p).sum()
}

/// Expected optimal matching distance on the sphere.
pub fn expected_optimal_distance_s(size: ProblemSize, dim: u32, mode: EstimateMode) -> Result<EstimateResult> {
    let g = sphere_geometry(dim)?;
    let n = size.n() as f64;
    match mode {
        EstimateMode::Nearest => {
            let s = 1.0 / dim as f64;
            let v = g.max_distance * (lgamma(1.0 + s)).exp() * n.powf(-s);
            Ok(EstimateResult::plain(v, mode, 1))
        }
        EstimateMode::Greedy => {
            let means = conditional_distances_s(size.n(), size.m(), dim)?;
            Ok(EstimateResult::plain(mix(&means, &greedy_prob_exact(size)?), mode, 1))
        }
        EstimateMode::Refined | EstimateMode::RefinedCorrected => {
            let means = conditional_distances_s(size.n(), size.m(), dim)?;
            let base = mix(&means, &refined_prob(size)?);
            if mode == EstimateMode::Refined {
                return Ok(EstimateResult::plain(base, mode, 1));
            }
            let delta = correction_delta_s(size, dim)?;
            Ok(EstimateResult {
                value: (1.0 + delta.value) * base,
                mode,
                moment: 1,
                delta_s: Some(delta.value),
                delta_b: None,
            })
        }
        EstimateMode::Kappa(_) => domain("kappa modes are not defined on the sphere"),
    }
}
