//! Demand pooling for ride-hailing fleets in a unit-area service region.
//!
//! Customers arrive at rate `λ` per unit area and time with uniform origins
//! and destinations; vehicles move at unit speed, so distances and times are
//! interchangeable. Waiting customers and idle vehicles are matched by an
//! optimal assignment every `τ`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{domain, Error, Result};
use crate::lap::{solve_exact, CostMatrix};
use crate::montecarlo::StreamId;
use crate::rbmp_b::{ball_geometry, expected_optimal_distance_in, BallGeometry};
use crate::rbmp_i::{kappa_approx_real, EstimateMode, ProblemSize};
use crate::specfun::lgamma;

/// Regime in which the Cobb-Douglas form is justified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    NMuchGreaterM,
    GeneralInvalid,
}

/// Matching function `M(m, n) = α₀ m^{α₁} n^{α₂}` implied by the
/// single-vertex nearest distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobbDouglasParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub validity: Validity,
}

impl CobbDouglasParams {
    /// Matches per unit time with `m` waiting customers and `n` idle vehicles.
    pub fn rate(&self, m: f64, n: f64) -> f64 {
        self.alpha0 * m.powf(self.alpha1) * n.powf(self.alpha2)
    }
}

pub fn cobb_douglas_params(p: f64) -> Result<CobbDouglasParams> {
    if !(p >= 1.0) || !p.is_finite() {
        return domain(format!("metric exponent p must be >= 1, got {p}"));
    }
    let ln_alpha0 = 2f64.ln() + lgamma(1.0 / p + 1.0) - lgamma(1.5) - 0.5 * lgamma(2.0 / p + 1.0);
    Ok(CobbDouglasParams { alpha0: ln_alpha0.exp(), alpha1: 1.0, alpha2: 0.5, validity: Validity::NMuchGreaterM })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripMethod {
    ClosedForm,
    MonteCarlo { pairs: u64, seed: u64 },
}

/// Mean in-service trip length with its Monte Carlo standard error
/// (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripLength {
    pub value: f64,
    pub standard_error: f64,
}

/// Pairs used when no closed form exists.
pub const TRIP_LENGTH_PAIRS: u64 = 10_000_000;

/// Mean L^p distance between two uniform points of the unit-volume ball.
pub fn trip_length(dim: u32, p: f64, method: TripMethod) -> Result<TripLength> {
    let g = ball_geometry(dim, p)?;
    match method {
        TripMethod::ClosedForm => match (dim, p) {
            (1, _) => Ok(TripLength { value: 1.0 / 3.0, standard_error: 0.0 }),
            (2, 2.0) => Ok(TripLength { value: 128.0 / (45.0 * PI.powf(1.5)), standard_error: 0.0 }),
            _ => domain(format!("no closed form for the mean trip length with D={dim}, p={p}")),
        },
        TripMethod::MonteCarlo { pairs, seed } => trip_length_mc(&g, pairs, seed),
    }
}

fn trip_length_mc(g: &BallGeometry, pairs: u64, seed: u64) -> Result<TripLength> {
    if pairs < 2 {
        return domain("need at least two pairs");
    }
    const CHUNK: u64 = 100_000;
    let chunks = pairs.div_ceil(CHUNK);
    let sums: Vec<(f64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamId { seed, point: u64::MAX, instance: c }.rng(7);
            let count = CHUNK.min(pairs - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let d = g.distance(&g.sample_point(&mut rng), &g.sample_point(&mut rng));
                s += d;
                s2 += d * d;
            }
            (s, s2, count)
        })
        .collect();
    let (s, s2, n) = sums.iter().fold((0.0, 0.0, 0u64), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(TripLength { value: mean, standard_error: (var / nf).sqrt() })
}

/// Closed form when available, otherwise a cached `10^7`-pair estimate.
pub fn default_trip_length(dim: u32, p: f64) -> Result<f64> {
    if let Ok(t) = trip_length(dim, p, TripMethod::ClosedForm) {
        return Ok(t.value);
    }
    static CACHE: OnceLock<RwLock<HashMap<(u32, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (dim, p.to_bits());
    if let Some(v) = cache.read().ok().and_then(|c| c.get(&key).copied()) {
        return Ok(v);
    }
    let v = trip_length(dim, p, TripMethod::MonteCarlo { pairs: TRIP_LENGTH_PAIRS, seed: 0 })?.value;
    if let Ok(mut c) = cache.write() {
        c.insert(key, v);
    }
    Ok(v)
}

/// How the expected pickup distance is evaluated inside the models.
/// Defaults to `Kappa(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceModel {
    /// κ-approximation of the greedy cost with the given κ.
    Kappa(u32),
    /// Boundary- and correlation-corrected refined estimate, interpolated
    /// bilinearly between integer counts.
    RefinedCorrected,
}

impl Default for DistanceModel {
    fn default() -> Self {
        DistanceModel::Kappa(0)
    }
}

/// Expected pickup distance in the unit-area disk for real-valued counts.
pub fn pickup_distance(m: f64, n: f64, p: f64, model: DistanceModel) -> Result<f64> {
    if !(m >= 1.0) || !m.is_finite() {
        return domain(format!("need at least one customer, got m={m}"));
    }
    if n < m {
        return Err(Error::Infeasible(format!("fewer idle vehicles than customers: m={m}, n={n}")));
    }
    let g = ball_geometry(2, p)?;
    match model {
        DistanceModel::Kappa(k) => kappa_approx_real(m, n, g.power_law(), k),
        DistanceModel::RefinedCorrected => refined_interpolated(m, n, &g),
    }
}

fn refined_interpolated(m: f64, n: f64, g: &BallGeometry) -> Result<f64> {
    let corners = |x: f64| {
        let lo = x.floor();
        if x == lo {
            vec![(lo as usize, 1.0)]
        } else {
            vec![(lo as usize, lo + 1.0 - x), (lo as usize + 1, x - lo)]
        }
    };
    let mut total = 0.0;
    for (mi, wm) in corners(m) {
        for (ni, wn) in corners(n) {
            let size = ProblemSize::new(mi, ni.max(mi))?;
            total += wm * wn * expected_optimal_distance_in(size, g, EstimateMode::RefinedCorrected)?.value;
        }
    }
    Ok(total)
}

/// Expected pickup distance plus `γ τ / 2`.
pub fn pooling_objective(tau: f64, m: f64, n: f64, gamma: f64, p: f64, model: DistanceModel) -> Result<f64> {
    if !(tau > 0.0) {
        return domain(format!("tau must be positive, got {tau}"));
    }
    Ok(pickup_distance(m, n, p, model)? + 0.5 * gamma * tau)
}

/// Ten evenly spaced pooling intervals from `1/λ` to `0.1`.
pub fn default_tau_grid(lambda: f64) -> Vec<f64> {
    let lo = 1.0 / lambda;
    let hi = 0.1f64.max(lo);
    (0..10).map(|j| lo + (hi - lo) * j as f64 / 9.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopScenario {
    pub lambda: f64,
    pub lambda_prime: f64,
    pub n_i: f64,
    pub gamma: f64,
    pub p: f64,
}

impl OpenLoopScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.lambda_prime >= 0.0) || !(self.n_i >= 0.0) || !(self.gamma >= 0.0) {
            return domain("need lambda > 0 and lambda', n_i, gamma >= 0");
        }
        ball_geometry(2, self.p).map(|_| ())
    }

    pub fn counts(&self, tau: f64) -> (f64, f64) {
        (self.lambda * tau, self.n_i + self.lambda_prime * tau)
    }

    pub fn objective(&self, tau: f64, model: DistanceModel) -> Result<f64> {
        let (m, n) = self.counts(tau);
        pooling_objective(tau, m, n, self.gamma, self.p, model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingRegime {
    /// Optimum at `τ = 1/λ`: match every customer on arrival.
    InstantMatching,
    /// Optimum above `1/λ`: pool customers into batches.
    BatchMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    /// `None` where customers outnumber vehicles.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopOptimum {
    pub tau_star: f64,
    pub objective_star: f64,
    pub regime: PoolingRegime,
    pub curve: Vec<CurvePoint>,
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Minimizes the pooling objective over `τ ≥ 1/λ`: best grid point, then a
/// golden-section search on the bracketing cells.
pub fn optimize_open_loop(scenario: &OpenLoopScenario, tau_grid: &[f64], model: DistanceModel) -> Result<OpenLoopOptimum> {
    scenario.validate()?;
    let lo = 1.0 / scenario.lambda;
    let mut taus: Vec<f64> = tau_grid.iter().copied().filter(|t| *t >= lo * (1.0 - 1e-12)).map(|t| t.max(lo)).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let curve: Vec<CurvePoint> = taus
        .iter()
        .map(|&tau| match scenario.objective(tau, model) {
            Ok(v) => Ok(CurvePoint { tau, objective: Some(v) }),
            Err(Error::Infeasible(_)) => Ok(CurvePoint { tau, objective: None }),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let feasible: Vec<(usize, f64)> = curve.iter().enumerate().filter_map(|(i, c)| c.objective.map(|v| (i, v))).collect();
    let Some(&(best, best_val)) = feasible.iter().min_by(|a, b| a.1.total_cmp(&b.1)) else {
        return Err(Error::Infeasible("no feasible pooling interval in the grid".into()));
    };
    let feasible_tau = |i: usize| curve.get(i).filter(|c| c.objective.is_some()).map(|c| c.tau);
    let left = best.checked_sub(1).and_then(feasible_tau).unwrap_or(curve[best].tau);
    let right = feasible_tau(best + 1).unwrap_or(curve[best].tau);
    let (mut tau_star, mut objective_star) = (curve[best].tau, best_val);
    if right > left {
        let (t, v) = golden_section(|t| scenario.objective(t, model), left, right, 1e-7 * right)?;
        if v < objective_star {
            (tau_star, objective_star) = (t, v);
        }
    }
    if tau_star <= left && left == lo {
        tau_star = lo;
        objective_star = scenario.objective(lo, model)?;
    }
    // the boundary wins whenever nothing inside beats it
    if let Ok(at_lo) = scenario.objective(lo, model) {
        if at_lo <= objective_star {
            (tau_star, objective_star) = (lo, at_lo);
        }
    }
    let regime = if tau_star == lo { PoolingRegime::InstantMatching } else { PoolingRegime::BatchMatching };
    Ok(OpenLoopOptimum { tau_star, objective_star, regime, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopScenario {
    pub lambda: f64,
    /// Fleet size `S`.
    pub fleet: f64,
    pub gamma: f64,
    pub p: f64,
    /// Mean in-service trip length `l`.
    pub trip_length: f64,
}

impl ClosedLoopScenario {
    /// Scenario with the default trip length for the disk.
    pub fn new(lambda: f64, fleet: f64, gamma: f64, p: f64) -> Result<Self> {
        let s = Self { lambda, fleet, gamma, p, trip_length: default_trip_length(2, p)? };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.fleet > 0.0) || !(self.gamma >= 0.0) || !(self.trip_length > 0.0) {
            return domain("need lambda, fleet and trip length positive and gamma >= 0");
        }
        ball_geometry(2, self.p).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Efficient,
    /// The wild-goose-chase state with few idle vehicles.
    Inefficient,
}

/// A steady state of the closed-loop model at a fixed `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub n_i: f64,
    pub n_a: f64,
    pub n_s: f64,
    pub kind: EquilibriumKind,
    pub pickup_distance: f64,
    pub objective: f64,
    /// Whether `λτ ≤ n_a ≤ S` and `0 ≤ n_s ≤ S` also hold. Only the idle
    /// count is enforced by the root search.
    pub within_bounds: bool,
}

const ROOT_PANELS: usize = 200;
const MAX_ROOT_PANELS: usize = 3200;

/// Roots of the vehicle balance `S − λl − λ(E + τ/2) − n_i` over
/// `0 ≤ n_i ≤ S − λτ`, sorted efficient first.
pub fn closed_loop_equilibria(tau: f64, scenario: &ClosedLoopScenario, model: DistanceModel) -> Result<Vec<EquilibriumState>> {
    scenario.validate()?;
    if !(tau > 0.0) {
        return domain(format!("tau must be positive, got {tau}"));
    }
    let (lambda, fleet) = (scenario.lambda, scenario.fleet);
    let m = lambda * tau;
    if m < 1.0 {
        return domain(format!("need at least one customer per interval, got lambda*tau={m}"));
    }
    if m > fleet {
        return Err(Error::Infeasible(format!("lambda*tau={m} exceeds the fleet size {fleet}")));
    }
    let upper = fleet - m;
    let ns = lambda * scenario.trip_length;
    let pickup = |ni: f64| pickup_distance(m, ni + m, scenario.p, model);
    let balance = |ni: f64| -> Result<f64> { Ok(fleet - ns - lambda * (pickup(ni)? + 0.5 * tau) - ni) };

    let mut roots = Vec::new();
    let mut panels = ROOT_PANELS;
    loop {
        roots.clear();
        let xs: Vec<f64> = (0..=panels).map(|j| upper * j as f64 / panels as f64).collect();
        let gs: Vec<f64> = xs.iter().map(|&x| balance(x)).collect::<Result<_>>()?;
        for j in 0..panels {
            let (g0, g1) = (gs[j], gs[j + 1]);
            if g0 == 0.0 {
                roots.push(xs[j]);
            } else if g0 * g1 < 0.0 {
                roots.push(bisect(&balance, xs[j], xs[j + 1], g0, 1e-6 * fleet)?);
            }
        }
        if gs[panels] == 0.0 {
            roots.push(xs[panels]);
        }
        // A tangency can hide a pair of roots inside one panel.
        let near_zero = gs.iter().any(|g| g.abs() < 2.0 * upper / panels as f64);
        if !roots.is_empty() || !near_zero || panels >= MAX_ROOT_PANELS {
            break;
        }
        panels *= 2;
        debug!(panels, "refining equilibrium scan");
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * fleet);
    roots
        .iter()
        .enumerate()
        .map(|(idx, &ni)| {
            let e = pickup(ni)?;
            let n_a = lambda * (e + 0.5 * tau);
            let kind = if idx == 0 { EquilibriumKind::Efficient } else { EquilibriumKind::Inefficient };
            Ok(EquilibriumState {
                n_i: ni,
                n_a,
                n_s: ns,
                kind,
                pickup_distance: e,
                objective: e + 0.5 * scenario.gamma * tau,
                within_bounds: n_a >= m && n_a <= fleet && ns <= fleet,
            })
        })
        .collect()
}

fn bisect(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> Result<f64> {
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

/// Smallest fleet with a steady state at `τ` (default `1/λ`).
pub fn minimum_fleet(lambda: f64, p: f64, tau: Option<f64>, model: DistanceModel) -> Result<u64> {
    if !(lambda > 0.0) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    let tau = tau.unwrap_or(1.0 / lambda);
    let l = default_trip_length(2, p)?;
    let has_state = |s: u64| -> Result<bool> {
        let sc = ClosedLoopScenario { lambda, fleet: s as f64, gamma: 1.0, p, trip_length: l };
        match closed_loop_equilibria(tau, &sc, model) {
            Ok(v) => Ok(!v.is_empty()),
            Err(Error::Infeasible(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    // Below λ(l + τ) no vehicle can be idle.
    let mut lo = (lambda * (l + tau)).floor().max(1.0) as u64;
    let mut hi = lo.max(1) * 2;
    while !has_state(hi)? {
        lo = hi;
        hi *= 2;
        if hi > 1 << 40 {
            return Err(Error::Numeric("minimum fleet search diverged".into()));
        }
    }
    if has_state(lo)? {
        return Ok(lo);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if has_state(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Model curve of a closed-loop system over a `τ` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopPoint {
    pub tau: f64,
    pub efficient: Option<EquilibriumState>,
    pub inefficient: Option<EquilibriumState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopOptimum {
    /// Best `τ` on the efficient branch, if any grid point has one.
    pub tau_star: Option<f64>,
    pub curve: Vec<ClosedLoopPoint>,
}

pub fn optimize_closed_loop(scenario: &ClosedLoopScenario, tau_grid: &[f64], model: DistanceModel) -> Result<ClosedLoopOptimum> {
    let curve: Vec<ClosedLoopPoint> = tau_grid
        .iter()
        .map(|&tau| {
            let roots = match closed_loop_equilibria(tau, scenario, model) {
                Ok(r) => r,
                Err(Error::Infeasible(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            let pick = |k| roots.iter().find(|r| r.kind == k).copied();
            Ok(ClosedLoopPoint { tau, efficient: pick(EquilibriumKind::Efficient), inefficient: pick(EquilibriumKind::Inefficient) })
        })
        .collect::<Result<_>>()?;
    let tau_star = curve
        .iter()
        .filter_map(|c| c.efficient.map(|e| (c.tau, e.objective)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, _)| t);
    Ok(ClosedLoopOptimum { tau_star, curve })
}

/// Mean and standard error of a simulated quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub mean: f64,
    pub standard_error: f64,
}

fn measure(xs: &[f64]) -> Measured {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Measured { mean, standard_error: (var / n).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopMeasurement {
    pub tau: f64,
    /// Per-customer pickup distance plus `γ` times pooling wait.
    pub objective: Measured,
    pub pickup: Measured,
    pub pooling_wait: Measured,
    pub replications: usize,
    /// Replications redrawn because nobody could be matched.
    pub resampled: usize,
    /// Replications where customers outnumbered vehicles.
    pub surplus_flagged: usize,
}

struct OpenLoopReplication {
    objective: f64,
    pickup: f64,
    wait: f64,
    surplus: bool,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive mean");
    let x: f64 = d.sample(rng);
    x as usize
}

/// One pooling interval: `n_i` idle vehicles at time 0, Poisson customers and
/// vehicles over `[0, τ]`, one optimal matching at `τ`.
pub fn simulate_open_loop(scenario: &OpenLoopScenario, tau: f64, replications: usize, seed: u64) -> Result<OpenLoopMeasurement> {
    scenario.validate()?;
    if !(tau > 0.0) || replications == 0 {
        return domain("need tau > 0 and at least one replication");
    }
    let g = ball_geometry(2, scenario.p)?;
    let n_i = scenario.n_i.round() as usize;
    let reps: Vec<(OpenLoopReplication, usize)> = (0..replications as u64)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let mut rng = StreamId { seed, point: tau.to_bits(), instance: r }.rng(11);
            let mut redraws = 0;
            loop {
                let m = poisson(scenario.lambda * tau, &mut rng);
                let n = n_i + poisson(scenario.lambda_prime * tau, &mut rng);
                if m == 0 || n == 0 {
                    redraws += 1;
                    continue;
                }
                let arrivals: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * tau).collect();
                let customers: Vec<Vec<f64>> = (0..m).map(|_| g.sample_point(&mut rng)).collect();
                let vehicles: Vec<Vec<f64>> = (0..n).map(|_| g.sample_point(&mut rng)).collect();
                let pairs = match_pairs(&g, &customers, &vehicles)?;
                let k = pairs.len() as f64;
                let pickup = pairs.iter().map(|&(_, _, d)| d).sum::<f64>() / k;
                let wait = pairs.iter().map(|&(c, _, _)| tau - arrivals[c]).sum::<f64>() / k;
                let rep = OpenLoopReplication { objective: pickup + scenario.gamma * wait, pickup, wait, surplus: m > n };
                return Ok((rep, redraws));
            }
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&OpenLoopReplication) -> f64| reps.iter().map(|(r, _)| f(r)).collect::<Vec<_>>();
    Ok(OpenLoopMeasurement {
        tau,
        objective: measure(&col(|r| r.objective)),
        pickup: measure(&col(|r| r.pickup)),
        pooling_wait: measure(&col(|r| r.wait)),
        replications,
        resampled: reps.iter().map(|(_, d)| d).sum(),
        surplus_flagged: reps.iter().filter(|(r, _)| r.surplus).count(),
    })
}

/// Optimal matching of customers to vehicles, as `(customer, vehicle,
/// distance)`. With more customers than vehicles every vehicle is matched and
/// the surplus customers are left out.
fn match_pairs(g: &BallGeometry, customers: &[Vec<f64>], vehicles: &[Vec<f64>]) -> Result<Vec<(usize, usize, f64)>> {
    let (m, n) = (customers.len(), vehicles.len());
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    if m <= n {
        let cost = CostMatrix::from_fn(m, n, |i, j| g.distance(&customers[i], &vehicles[j]))?;
        let a = solve_exact(&cost)?;
        Ok(a.col_of_row.iter().enumerate().map(|(c, &v)| (c, v, cost.get(c, v))).collect())
    } else {
        let cost = CostMatrix::from_fn(n, m, |j, i| g.distance(&customers[i], &vehicles[j]))?;
        let a = solve_exact(&cost)?;
        let mut pairs: Vec<_> = a.col_of_row.iter().enumerate().map(|(v, &c)| (c, v, cost.get(v, c))).collect();
        pairs.sort_by_key(|p| p.0);
        Ok(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    /// Batches for the batch-means standard errors.
    pub batches: usize,
    /// Record the vehicle state counts every this many epochs (0: never).
    pub trajectory_stride: usize,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self { horizon: 30.0, warmup: 6.0, seed: 0, batches: 10, trajectory_stride: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub idle: usize,
    pub assigned: usize,
    pub in_service: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopMeasurement {
    pub tau: f64,
    /// Mean over served customers of pickup distance plus `γ` times pooling wait.
    pub objective: Measured,
    pub pickup: Measured,
    pub pooling_wait: Measured,
    pub lost_fraction: f64,
    pub served: usize,
    /// Served customers per unit time after warm-up.
    pub served_rate: f64,
    /// Time-averaged vehicle counts after warm-up.
    pub mean_idle: Measured,
    pub mean_assigned: Measured,
    pub mean_in_service: Measured,
    /// Mean in-service trip length of served customers.
    pub mean_trip: f64,
    /// Events at which the three state counts did not add up to the fleet.
    pub conservation_violations: usize,
    pub trajectory: Vec<StateSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VehicleEvent {
    PickedUp,
    DroppedOff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scheduled {
    t: f64,
    seq: u64,
    vehicle: usize,
    kind: VehicleEvent,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum VehicleState {
    Idle(Vec<f64>),
    Assigned { dest: Vec<f64>, trip: f64 },
    InService(Vec<f64>),
}

struct Customer {
    arrival: f64,
    origin: Vec<f64>,
    dest: Vec<f64>,
    first_epoch: u64,
}

#[derive(Default)]
struct Counts {
    idle: usize,
    assigned: usize,
    in_service: usize,
}

/// Time integral of the three state counts over `[from, to]`.
#[derive(Default)]
struct Occupancy {
    last: f64,
    idle: Vec<f64>,
    assigned: Vec<f64>,
    in_service: Vec<f64>,
}

/// Fleet of `S` vehicles, matching every `τ`. Customers get one epoch of
/// grace: those still unmatched one epoch after they first could have been
/// matched are lost.
pub fn simulate_closed_loop(scenario: &ClosedLoopScenario, tau: f64, config: ClosedLoopConfig) -> Result<ClosedLoopMeasurement> {
    scenario.validate()?;
    if !(tau > 0.0) || !(config.horizon > config.warmup) || config.warmup < 0.0 || config.batches == 0 {
        return domain("need tau > 0, horizon > warmup >= 0 and at least one batch");
    }
    let g = ball_geometry(2, scenario.p)?;
    let fleet = scenario.fleet.round() as usize;
    let mut rng = StreamId { seed: config.seed, point: tau.to_bits(), instance: fleet as u64 }.rng(13);
    let gap = Exp::new(scenario.lambda).map_err(|e| Error::Input(e.to_string()))?;

    let mut vehicles: Vec<VehicleState> = (0..fleet).map(|_| VehicleState::Idle(g.sample_point(&mut rng))).collect();
    let mut counts = Counts { idle: fleet, ..Counts::default() };
    let mut events: BinaryHeap<Reverse<Scheduled>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut waiting: Vec<Customer> = Vec::new();
    let mut next_arrival: f64 = gap.sample(&mut rng);

    let span = config.horizon - config.warmup;
    let batch_of = |t: f64| (((t - config.warmup) / span * config.batches as f64) as usize).min(config.batches - 1);
    let mut occ = Occupancy {
        last: 0.0,
        idle: vec![0.0; config.batches],
        assigned: vec![0.0; config.batches],
        in_service: vec![0.0; config.batches],
    };
    // Integrates counts over [occ.last, t], splitting at batch edges.
    let advance = |occ: &mut Occupancy, counts: &Counts, t: f64| {
        let mut from = occ.last.max(config.warmup);
        let mut b = if from < t { batch_of(from) } else { 0 };
        while from < t {
            let edge = config.warmup + span * (b + 1) as f64 / config.batches as f64;
            if edge <= from && b + 1 < config.batches {
                b += 1;
                continue;
            }
            let to = if b + 1 == config.batches { t } else { t.min(edge) };
            let dt = to - from;
            occ.idle[b] += dt * counts.idle as f64;
            occ.assigned[b] += dt * counts.assigned as f64;
            occ.in_service[b] += dt * counts.in_service as f64;
            from = to;
        }
        occ.last = occ.last.max(t);
    };

    let mut violations = 0usize;
    let mut served = Vec::<(f64, f64, f64, f64)>::new(); // arrival, pickup, wait, trip
    let (mut arrived_after_warmup, mut lost_after_warmup) = (0usize, 0usize);
    let mut trajectory = Vec::new();

    let epochs = (config.horizon / tau).floor() as u64;
    for j in 1..=epochs {
        let now = j as f64 * tau;
        while next_arrival <= now {
            let first_epoch = (next_arrival / tau).ceil().max(1.0) as u64;
            waiting.push(Customer {
                arrival: next_arrival,
                origin: g.sample_point(&mut rng),
                dest: g.sample_point(&mut rng),
                first_epoch,
            });
            if next_arrival >= config.warmup {
                arrived_after_warmup += 1;
            }
            next_arrival += gap.sample(&mut rng);
        }
        while let Some(Reverse(ev)) = events.peek().copied() {
            if ev.t > now {
                break;
            }
            events.pop();
            advance(&mut occ, &counts, ev.t);
            let state = std::mem::replace(&mut vehicles[ev.vehicle], VehicleState::InService(Vec::new()));
            vehicles[ev.vehicle] = match (ev.kind, state) {
                (VehicleEvent::PickedUp, VehicleState::Assigned { dest, trip }) => {
                    counts.assigned -= 1;
                    counts.in_service += 1;
                    seq += 1;
                    events.push(Reverse(Scheduled { t: ev.t + trip, seq, vehicle: ev.vehicle, kind: VehicleEvent::DroppedOff }));
                    VehicleState::InService(dest)
                }
                (VehicleEvent::DroppedOff, VehicleState::InService(dest)) => {
                    counts.in_service -= 1;
                    counts.idle += 1;
                    VehicleState::Idle(dest)
                }
                (kind, _) => return Err(Error::Numeric(format!("vehicle {} received {kind:?} in the wrong state", ev.vehicle))),
            };
            if counts.idle + counts.assigned + counts.in_service != fleet {
                violations += 1;
            }
        }
        advance(&mut occ, &counts, now);

        let idle: Vec<usize> = (0..fleet).filter(|&v| matches!(vehicles[v], VehicleState::Idle(_))).collect();
        let origins: Vec<Vec<f64>> = waiting.iter().map(|c| c.origin.clone()).collect();
        let spots: Vec<Vec<f64>> = idle
            .iter()
            .map(|&v| match &vehicles[v] {
                VehicleState::Idle(pos) => pos.clone(),
                _ => unreachable!(),
            })
            .collect();
        let pairs = match_pairs(&g, &origins, &spots)?;
        let mut matched = vec![false; waiting.len()];
        for &(c, vi, d) in &pairs {
            matched[c] = true;
            let cust = &waiting[c];
            let v = idle[vi];
            let trip = g.distance(&cust.origin, &cust.dest);
            vehicles[v] = VehicleState::Assigned { dest: cust.dest.clone(), trip };
            counts.idle -= 1;
            counts.assigned += 1;
            seq += 1;
            events.push(Reverse(Scheduled { t: now + d, seq, vehicle: v, kind: VehicleEvent::PickedUp }));
            if cust.arrival >= config.warmup {
                served.push((cust.arrival, d, now - cust.arrival, trip));
            }
        }
        if counts.idle + counts.assigned + counts.in_service != fleet {
            violations += 1;
        }
        let mut kept = Vec::with_capacity(waiting.len());
        for (c, hit) in waiting.into_iter().zip(matched) {
            if hit {
                continue;
            }
            if j > c.first_epoch {
                if c.arrival >= config.warmup {
                    lost_after_warmup += 1;
                }
            } else {
                kept.push(c);
            }
        }
        waiting = kept;
        if config.trajectory_stride > 0 && j % config.trajectory_stride as u64 == 0 {
            trajectory.push(StateSample { t: now, idle: counts.idle, assigned: counts.assigned, in_service: counts.in_service });
        }
    }
    advance(&mut occ, &counts, config.horizon);

    // Batch means by arrival time.
    let mut obj_b = vec![Vec::new(); config.batches];
    for &(arr, d, w, _) in &served {
        obj_b[batch_of(arr)].push((d, w));
    }
    let batch_mean = |f: &dyn Fn(f64, f64) -> f64| -> Measured {
        let means: Vec<f64> = obj_b
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| b.iter().map(|&(d, w)| f(d, w)).sum::<f64>() / b.len() as f64)
            .collect();
        if means.is_empty() {
            return Measured { mean: f64::NAN, standard_error: f64::NAN };
        }
        measure(&means)
    };
    let gamma = scenario.gamma;
    let width = span / config.batches as f64;
    let per_time = |xs: &[f64]| measure(&xs.iter().map(|x| x / width).collect::<Vec<_>>());
    let n_served = served.len();
    Ok(ClosedLoopMeasurement {
        tau,
        objective: batch_mean(&|d, w| d + gamma * w),
        pickup: batch_mean(&|d, _| d),
        pooling_wait: batch_mean(&|_, w| w),
        lost_fraction: if arrived_after_warmup > 0 { lost_after_warmup as f64 / arrived_after_warmup as f64 } else { 0.0 },
        served: n_served,
        served_rate: n_served as f64 / span,
        mean_idle: per_time(&occ.idle),
        mean_assigned: per_time(&occ.assigned),
        mean_in_service: per_time(&occ.in_service),
        mean_trip: served.iter().map(|s| s.3).sum::<f64>() / n_served.max(1) as f64,
        conservation_violations: violations,
        trajectory,
    })
}
