//! Matching distances in the unit-volume L^p ball, with boundary effects.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::orderstat::{binomial_cdf_prefix, ln_binomials};
use crate::quad::{integrate_vec, QuadOptions};
use crate::rbmp_i::{
    expected_cost_with, greedy_prob_exact, kappa_approx_greedy_cost, refined_prob, EstimateMode, EstimateResult,
    MatchingProbabilityVector, PowerLawCost, ProblemSize,
};
use crate::rbmp_s::{asymptotic_sphere_excess, correction_delta_s, CorrectionFactor};
use crate::specfun::{inc_beta, lgamma};

/// An L^p ball of radius `radius` in `D` dimensions. The canonical geometry
/// from [`ball_geometry`] has unit volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallGeometry {
    pub dim: u32,
    pub p: f64,
    pub radius: f64,
}

impl BallGeometry {
    /// Volume of the L^p ball of radius `r` in this dimension.
    pub fn volume_of_radius(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        (d * (2.0 * r).ln() + d * lgamma(1.0 / self.p + 1.0) - lgamma(d / self.p + 1.0)).exp()
    }

    pub fn volume(&self) -> f64 {
        self.volume_of_radius(self.radius)
    }

    /// Same shape with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { radius: self.radius * factor, ..*self }
    }

    pub fn power_law(&self) -> PowerLawCost {
        PowerLawCost::new(self.radius, self.dim).expect("valid geometry")
    }

    /// Density of the distance from the center for a uniform point.
    pub fn radial_density(&self, r: f64) -> f64 {
        if !(0.0..=self.radius).contains(&r) {
            return 0.0;
        }
        let d = self.dim as f64;
        d * r.powi(self.dim as i32 - 1) / self.radius.powi(self.dim as i32)
    }

    /// L^p distance.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.p;
        if p == 2.0 {
            return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
        if p == 1.0 {
            return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        }
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.distance(a, &vec![0.0; a.len()])
    }

    /// Uniform point in the ball: generalized-Gaussian direction, radius
    /// `R·U^{1/D}`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let shape = Gamma::new(1.0 / self.p, 1.0).expect("p >= 1");
        loop {
            let t: Vec<f64> = (0..self.dim)
                .map(|_| {
                    let g: f64 = shape.sample(rng);
                    let mag = g.powf(1.0 / self.p);
                    if rng.gen::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let norm = self.norm(&t);
            if norm > 1e-300 {
                let u: f64 = rng.gen();
                let scale = self.radius * u.powf(1.0 / self.dim as f64) / norm;
                return t.into_iter().map(|x| x * scale).collect();
            }
        }
    }

    /// Volume of the cap of height `h` cut from a ball of radius `r`, exact
    /// for `p = 2` and used as an approximation otherwise.
    pub fn cap_volume(&self, r: f64, h: f64) -> f64 {
        if r <= 0.0 || h <= 0.0 {
            return 0.0;
        }
        let h = h.min(2.0 * r);
        let half = 0.5 * self.volume_of_radius(r);
        let a = 0.5 * (self.dim as f64 + 1.0);
        let z = |hh: f64| ((2.0 * r * hh - hh * hh) / (r * r)).clamp(0.0, 1.0);
        if h <= r {
            half * inc_beta(z(h), a, 0.5)
        } else {
            half * (2.0 - inc_beta(z(2.0 * r - h), a, 0.5))
        }
    }

    /// CDF of the distance from a point at radius `r` to a uniform point.
    pub fn distance_cdf_at(&self, x: f64, r: f64) -> f64 {
        let rb = self.radius;
        if x <= 0.0 {
            return 0.0;
        }
        if x <= rb - r || r <= 1e-12 * rb {
            return (x / rb).min(1.0).powi(self.dim as i32);
        }
        if x >= rb + r {
            return 1.0;
        }
        let h1 = (x * x - (rb - r) * (rb - r)) / (2.0 * r);
        let h2 = x + rb - r - h1;
        ((self.cap_volume(rb, h1) + self.cap_volume(x, h2)) / self.volume()).clamp(0.0, 1.0)
    }
}

pub fn ball_geometry(dim: u32, p: f64) -> Result<BallGeometry> {
    if dim == 0 {
        return domain("ball dimension must be at least 1");
    }
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("metric exponent p must be >= 1, got {p}"));
    }
    let d = dim as f64;
    let radius = (lgamma(d / p + 1.0) / d - lgamma(1.0 / p + 1.0)).exp() / 2.0;
    Ok(BallGeometry { dim, p, radius })
}

/// A cap of height `h` on a ball of radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapSpec {
    pub radius: f64,
    pub height: f64,
}

pub fn cap_volume(cap: CapSpec, dim: u32, p: f64) -> Result<f64> {
    if !(cap.radius > 0.0) {
        return domain(format!("cap radius must be positive, got {}", cap.radius));
    }
    if !(0.0..=2.0 * cap.radius).contains(&cap.height) {
        return domain(format!("cap height must lie in [0, 2R], got {}", cap.height));
    }
    let g = ball_geometry(dim, p)?;
    Ok(g.cap_volume(cap.radius, cap.height))
}

/// Rejection estimate of the slab cap `{x₁ ≥ R − h}` of the L^p ball, for
/// validating the cap formula away from `p = 2`.
pub fn cap_volume_monte_carlo<R: Rng + ?Sized>(cap: CapSpec, dim: u32, p: f64, samples: usize, rng: &mut R) -> Result<f64> {
    let g = ball_geometry(dim, p)?;
    let unit = BallGeometry { radius: cap.radius, ..g };
    let cut = cap.radius - cap.height;
    let hits = (0..samples).filter(|_| unit.sample_point(rng)[0] >= cut).count();
    Ok(unit.volume() * hits as f64 / samples as f64)
}

pub fn pair_distance_cdf_at_r(x: f64, r: f64, geometry: &BallGeometry) -> Result<f64> {
    if !(0.0..=geometry.radius).contains(&r) {
        return domain(format!("r must lie in [0, {}], got {r}", geometry.radius));
    }
    if x < 0.0 || x > geometry.radius + r + 1e-15 {
        return domain(format!("x must lie in [0, R_B + r], got {x}"));
    }
    Ok(geometry.distance_cdf_at(x, r))
}

/// Mean distance from a uniform point at radius `r` to its k-th nearest of
/// `n` uniform points, for all `k ≤ k_max`.
fn conditional_distances_at_r(n: usize, geometry: &BallGeometry, r: f64, ln_binom: &[f64], out: &mut [f64]) -> Result<()> {
    let k_max = out.len();
    let rb = geometry.radius;
    let branch = rb - r;
    let pl = geometry.power_law();
    let interior = |k: usize| crate::rbmp_i::powerlaw_moment_real(k as f64, n as f64, 1, pl);
    // Fast path: every requested order statistic sits inside the interior
    // branch with overwhelming probability.
    let mut tail = vec![0.0; k_max];
    binomial_cdf_prefix(n, (branch / rb).max(0.0).powi(geometry.dim as i32), ln_binom, &mut tail);
    if tail[k_max - 1] < 1e-12 {
        for (k, o) in out.iter_mut().enumerate() {
            *o = interior(k + 1);
        }
        return Ok(());
    }
    let opts = QuadOptions { rel_tol: 1e-9, abs_tol: 1e-15, initial_panels: 6, max_panels: 4000 };
    let mut total = vec![0.0; k_max];
    let mut edges = vec![0.0];
    if branch > 0.0 {
        edges.push(branch);
    }
    edges.push(rb + r);
    for w in edges.windows(2) {
        let part = integrate_vec(
            |x, o| binomial_cdf_prefix(n, geometry.distance_cdf_at(x, r), ln_binom, o),
            k_max,
            w[0],
            w[1],
            opts,
        )?;
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    out.copy_from_slice(&total);
    Ok(())
}

type CacheKey = (usize, u32, u64, u64);

fn distance_cache() -> &'static RwLock<HashMap<CacheKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `E[C_B | k]` for `k = 1..=k_max`: nested quadrature over the radial
/// position of the demand vertex and the order-statistic integral.
pub fn conditional_distances_b(n: usize, k_max: usize, geometry: &BallGeometry) -> Result<Arc<Vec<f64>>> {
    if k_max == 0 || k_max > n {
        return domain(format!("need 1 <= k_max <= n, got k_max={k_max}, n={n}"));
    }
    let key = (n, geometry.dim, geometry.p.to_bits(), geometry.radius.to_bits());
    if let Some(v) = distance_cache().read().ok().and_then(|c| c.get(&key).cloned()) {
        if v.len() >= k_max {
            return Ok(v);
        }
    }
    let ln_binom = ln_binomials(n, k_max);
    let mut inner = vec![0.0; k_max];
    let mut failure = None;
    let opts = QuadOptions { rel_tol: 1e-7, abs_tol: 1e-14, initial_panels: 8, max_panels: 2000 };
    let values = integrate_vec(
        |r, out| {
            if failure.is_some() {
                out.fill(0.0);
                return;
            }
            if let Err(e) = conditional_distances_at_r(n, geometry, r, &ln_binom, &mut inner) {
                failure = Some(e);
            }
            let w = geometry.radial_density(r);
            out.iter_mut().zip(&inner).for_each(|(o, e)| *o = w * e);
        },
        k_max,
        0.0,
        geometry.radius,
        opts,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let values = Arc::new(values);
    if let Ok(mut c) = distance_cache().write() {
        let keep = c.get(&key).is_none_or(|old| old.len() < values.len());
        if keep {
            c.insert(key, values.clone());
        }
    }
    Ok(values)
}

/// `E[C_B | k]` for a single `k`.
pub fn conditional_distance_b(k: usize, n: usize, dim: u32, p: f64) -> Result<f64> {
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got k={k}, n={n}"));
    }
    let g = ball_geometry(dim, p)?;
    Ok(conditional_distances_b(n, k, &g)?[k - 1])
}

/// `β_B(n, D)`.
pub fn ball_beta(dim: u32) -> Result<f64> {
    let high = |d: u32| asymptotic_sphere_excess(d) * (d * d) as f64;
    match dim {
        0 => domain("dimension must be at least 1"),
        1 => Ok(std::f64::consts::SQRT_2 - 1.0),
        2 => Ok(0.5 * (std::f64::consts::SQRT_2 - 1.0 + high(3))),
        d => Ok(high(d)),
    }
}

pub fn correction_delta_b(size: ProblemSize, dim: u32) -> Result<CorrectionFactor> {
    Ok(CorrectionFactor::new(ball_beta(dim)?, size, dim))
}

fn mix(means: &[f64], probs: &MatchingProbabilityVector) -> f64 {
    means.iter().zip(&probs.probs).map(|(e, p)| e * p).sum()
}

/// `R_B Γ(1+1/D) n^{-1/D}`.
pub fn nearest_distance(geometry: &BallGeometry, n: f64) -> f64 {
    let s = 1.0 / geometry.dim as f64;
    geometry.radius * lgamma(1.0 + s).exp() * n.powf(-s)
}

/// Expected optimal matching distance in the ball.
pub fn expected_optimal_distance_b(size: ProblemSize, dim: u32, p: f64, mode: EstimateMode) -> Result<EstimateResult> {
    let g = ball_geometry(dim, p)?;
    expected_optimal_distance_in(size, &g, mode)
}

pub fn expected_optimal_distance_in(size: ProblemSize, g: &BallGeometry, mode: EstimateMode) -> Result<EstimateResult> {
    let n = size.n() as f64;
    let value = match mode {
        EstimateMode::Nearest => nearest_distance(g, n),
        EstimateMode::Greedy => expected_cost_with(&greedy_prob_exact(size)?, n, 1, g.power_law()),
        EstimateMode::Kappa(k) => kappa_approx_greedy_cost(size, g.power_law(), k)?,
        EstimateMode::Refined | EstimateMode::RefinedCorrected => {
            let means = conditional_distances_b(size.n(), size.m(), g)?;
            let base = mix(&means, &refined_prob(size)?);
            if mode == EstimateMode::RefinedCorrected {
                let db = correction_delta_b(size, g.dim)?.value;
                let ds = correction_delta_s(size, g.dim)?.value;
                return Ok(EstimateResult {
                    value: (1.0 + db) * (1.0 + ds) * base,
                    mode,
                    moment: 1,
                    delta_s: Some(ds),
                    delta_b: Some(db),
                });
            }
            base
        }
    };
    Ok(EstimateResult::plain(value, mode, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn size(m: usize, n: usize) -> ProblemSize {
        ProblemSize::new(m, n).unwrap()
    }

    #[test]
    fn radii() {
        assert_relative_eq!(ball_geometry(2, 2.0).unwrap().radius, 1.0 / PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(ball_geometry(2, 1.0).unwrap().radius, 0.5f64.sqrt(), max_relative = 1e-14);
        for p in [1.0, 1.5, 2.0, 7.0] {
            let g = ball_geometry(1, p).unwrap();
            assert_relative_eq!(g.radius, 0.5, max_relative = 1e-14);
            assert_relative_eq!(g.volume(), 1.0, max_relative = 1e-13);
        }
        assert!(ball_geometry(2, 0.5).is_err());
    }

    #[test]
    fn cap_examples() {
        let c = |r, h, d| cap_volume(CapSpec { radius: r, height: h }, d, 2.0).unwrap();
        assert_relative_eq!(c(1.0, 1.0, 2), PI / 2.0, max_relative = 1e-13);
        assert_relative_eq!(c(1.0, 2.0, 3), 4.0 * PI / 3.0, max_relative = 1e-13);
        let phi = 2.0 * f64::acos(0.5);
        assert_relative_eq!(c(1.0, 0.5, 2), (phi - phi.sin()) / 2.0, max_relative = 1e-12);
        assert_eq!(c(1.0, 0.0, 2), 0.0);
        assert!(cap_volume(CapSpec { radius: 1.0, height: 2.5 }, 2, 2.0).is_err());
    }

    #[test]
    fn cap_formula_vs_rejection_for_l1() {
        // p = 2 must agree; p = 1 is an approximation and is only bounded.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cap = CapSpec { radius: 1.0, height: 0.6 };
        let mc = cap_volume_monte_carlo(cap, 2, 2.0, 1_000_000, &mut rng).unwrap();
        let exact = cap_volume(cap, 2, 2.0).unwrap();
        assert!((mc - exact).abs() < 4.0 * (exact * PI).sqrt() / 1000.0, "{mc} vs {exact}");
        let mc1 = cap_volume_monte_carlo(cap, 2, 1.0, 200_000, &mut rng).unwrap();
        let approx1 = cap_volume(cap, 2, 1.0).unwrap();
        assert!((mc1 - approx1).abs() / approx1 < 0.5);
    }

    #[test]
    fn lens_area_matches_circle_geometry() {
        let g = ball_geometry(2, 2.0).unwrap();
        let (rb, r) = (g.radius, g.radius / 2.0);
        let x = 0.8 * rb;
        // classical lens area of circles with radii rb, x at center distance r
        let lens = |a: f64, b: f64, d: f64| {
            let t1 = a * a * ((d * d + a * a - b * b) / (2.0 * d * a)).acos();
            let t2 = b * b * ((d * d + b * b - a * a) / (2.0 * d * b)).acos();
            let t3 = 0.5 * ((-d + a + b) * (d + a - b) * (d - a + b) * (d + a + b)).sqrt();
            t1 + t2 - t3
        };
        let want = lens(rb, x, r) / (PI * rb * rb);
        assert_relative_eq!(pair_distance_cdf_at_r(x, r, &g).unwrap(), want, max_relative = 1e-12);
    }

    #[test]
    fn cdf_boundary_cases() {
        for (d, p) in [(1, 2.0), (2, 2.0), (2, 1.0), (3, 2.0), (3, 1.5)] {
            let g = ball_geometry(d, p).unwrap();
            for x in [0.1, 0.3, 0.5] {
                let x = x * g.radius;
                assert_relative_eq!(g.distance_cdf_at(x, 0.0), (x / g.radius).powi(d as i32), max_relative = 1e-14);
            }
            assert_relative_eq!(g.distance_cdf_at(2.0 * g.radius, g.radius), 1.0, epsilon = 1e-12);
            for r in [0.1, 0.4, 0.9] {
                let r = r * g.radius;
                let xb = g.radius - r;
                let inner = (xb / g.radius).powi(d as i32);
                let h1 = 1e-9 * g.radius;
                assert!((g.distance_cdf_at(xb + h1, r) - inner).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn radial_density_normalized() {
        for d in 1..=3 {
            let g = ball_geometry(d, 2.0).unwrap();
            let v = integrate(|r| g.radial_density(r), 0.0, g.radius, QuadOptions::default()).unwrap();
            assert_relative_eq!(v, 1.0, epsilon = 1e-10);
            let total = integrate(|r| g.radial_density(r) * g.distance_cdf_at(g.radius + r, r), 0.0, g.radius, QuadOptions::default()).unwrap();
            assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn segment_distances() {
        // Two uniform points on a unit segment are 1/3 apart on average.
        assert_relative_eq!(conditional_distance_b(1, 1, 1, 2.0).unwrap(), 1.0 / 3.0, max_relative = 1e-6);
        // larger of two distances: simulation oracle
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..reps {
            let u: f64 = rng.gen();
            let a = (u - rng.gen::<f64>()).abs();
            let b = (u - rng.gen::<f64>()).abs();
            let x = a.max(b);
            s += x;
            s2 += x * x;
        }
        let mean = s / reps as f64;
        let se = ((s2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        let got = conditional_distance_b(2, 2, 1, 2.0).unwrap();
        assert!((got - mean).abs() < 3.0 * se, "{got} vs {mean}");
    }

    #[test]
    fn disk_nearest_neighbor_monte_carlo() {
        let g = ball_geometry(2, 2.0).unwrap();
        let n = 200;
        let got = conditional_distance_b(1, n, 2, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = 20_000;
        let samples: Vec<f64> = (0..reps)
            .map(|_| {
                let u = g.sample_point(&mut rng);
                (0..n).map(|_| g.distance(&u, &g.sample_point(&mut rng))).fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / reps as f64;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((got - mean).abs() < 3.0 * sd / (reps as f64).sqrt(), "{got} vs {mean}");
        // boundary excess over the interior formula stays small at n = 200
        let interior = nearest_distance(&g, n as f64);
        assert!((got - interior) / interior < 0.03, "{got} vs {interior}");
    }

    #[test]
    fn scale_covariance() {
        let g = ball_geometry(2, 2.0).unwrap();
        let a = conditional_distances_b(30, 5, &g).unwrap();
        let b = conditional_distances_b(30, 5, &g.scaled(2.0)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(2.0 * x, *y, max_relative = 1e-6);
        }
    }

    #[test]
    fn sampler_radial_law_ks() {
        for (d, p) in [(2, 2.0), (2, 1.0), (3, 1.5)] {
            let g = ball_geometry(d, p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64 + 17);
            let n = 100_000;
            let mut r: Vec<f64> = (0..n).map(|_| g.norm(&g.sample_point(&mut rng))).collect();
            r.sort_by(f64::total_cmp);
            let ks = r
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let f = (x / g.radius).powi(d as i32);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.63 / (n as f64).sqrt(), "D={d} p={p} ks={ks}");
            assert!(r.last().unwrap() <= &g.radius);
        }
    }

    #[test]
    fn corrections() {
        assert!(correction_delta_b(size(1, 100), 2).unwrap().value < 1e-5);
        assert_relative_eq!(correction_delta_b(size(9, 9), 1).unwrap().value, 2f64.sqrt() - 1.0, max_relative = 1e-14);
        assert_relative_eq!(correction_delta_b(size(9, 9), 3).unwrap().value, 0.0831, max_relative = 1e-12);
    }

    #[test]
    fn nearest_identity() {
        for n in 1..=10_000usize {
            let v = expected_optimal_distance_b(size(1, n), 2, 2.0, EstimateMode::Nearest).unwrap().value;
            assert!((v - 0.5 / (n as f64).sqrt()).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cap_complement(h in 0.0f64..2.0, d in 1u32..6, r in 0.1f64..3.0) {
            let g = ball_geometry(d, 2.0).unwrap();
            let h = h * r;
            let total = g.cap_volume(r, h) + g.cap_volume(r, 2.0 * r - h);
            prop_assert!((total - g.volume_of_radius(r)).abs() <= 1e-10 * g.volume_of_radius(r));
        }

        #[test]
        fn cdf_monotone(r in 0.0f64..1.0, d in 1u32..4, p in 1.0f64..3.0) {
            let g = ball_geometry(d, p).unwrap();
            let r = r * g.radius;
            let mut prev = 0.0;
            for j in 0..=200 {
                let f = g.distance_cdf_at((g.radius + r) * j as f64 / 200.0, r);
                prop_assert!(f >= prev - 1e-12);
                prev = f;
            }
        }
    }
}
