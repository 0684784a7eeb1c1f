//! Reproducible random instances and estimator-versus-simulation sweeps.
//!
//! Each instance draws from its own ChaCha stream keyed by
//! `(seed, point, instance, tag)`, so a sweep gives bit-identical results
//! whatever the worker count.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::lap::{solve_exact, solve_greedy, CostMatrix};
use crate::rbmp_b::{ball_geometry, expected_optimal_distance_b, BallGeometry};
use crate::rbmp_i::{expected_cost, EstimateMode, EstimateResult, PowerLawCost, ProblemSize};
use crate::rbmp_s::{expected_optimal_distance_s, sphere_geometry, SphereGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    I,
    S,
    B,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::I => "I",
            Variant::S => "S",
            Variant::B => "B",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" => Ok(Variant::I),
            "S" | "s" => Ok(Variant::S),
            "B" | "b" => Ok(Variant::B),
            other => Err(Error::Input(format!("unknown variant {other:?}, expected I, S or B"))),
        }
    }
}

/// Instance family: variant plus geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub variant: Variant,
    pub dim: u32,
    /// Metric exponent, used by the ball only.
    pub p: f64,
    /// Cost range for i.i.d. costs, ignored elsewhere.
    pub radius: f64,
}

impl InstanceParams {
    pub fn new(variant: Variant, dim: u32, p: f64, radius: f64) -> Result<Self> {
        let params = Self { variant, dim, p, radius };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            Variant::I => PowerLawCost::new(self.radius, self.dim).map(|_| ()),
            Variant::S => sphere_geometry(self.dim).map(|_| ()),
            Variant::B => ball_geometry(self.dim, self.p).map(|_| ()),
        }
        .map_err(|e| Error::Input(e.to_string()))
    }
}

/// Identifies one instance inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub point: u64,
    pub instance: u64,
}

impl StreamId {
    /// Independent generator for this instance; `tag` separates uses.
    pub fn rng(&self, tag: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([self.seed, self.point, self.instance, tag]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// A generated instance. Spatial variants keep their points.
#[derive(Debug, Clone)]
pub struct InstanceSample {
    pub cost: CostMatrix,
    pub demand: Vec<Vec<f64>>,
    pub supply: Vec<Vec<f64>>,
}

enum Sampler {
    Iid(PowerLawCost),
    Sphere(SphereGeometry),
    Ball(BallGeometry),
}

impl Sampler {
    fn new(params: &InstanceParams) -> Result<Self> {
        params.validate()?;
        Ok(match params.variant {
            Variant::I => Sampler::Iid(PowerLawCost::new(params.radius, params.dim)?),
            Variant::S => Sampler::Sphere(sphere_geometry(params.dim)?),
            Variant::B => Sampler::Ball(ball_geometry(params.dim, params.p)?),
        })
    }

    fn draw<R: Rng + ?Sized>(&self, size: ProblemSize, rng: &mut R) -> Result<InstanceSample> {
        let (m, n) = (size.m(), size.n());
        let spatial = |point: &dyn Fn(&mut R) -> Vec<f64>, dist: &dyn Fn(&[f64], &[f64]) -> f64, rng: &mut R| {
            let demand: Vec<Vec<f64>> = (0..m).map(|_| point(rng)).collect();
            let supply: Vec<Vec<f64>> = (0..n).map(|_| point(rng)).collect();
            let cost = CostMatrix::from_fn(m, n, |i, j| dist(&demand[i], &supply[j]))?;
            Ok(InstanceSample { cost, demand, supply })
        };
        match self {
            Sampler::Iid(c) => {
                let s = 1.0 / c.dim() as f64;
                let cost = CostMatrix::from_fn(m, n, |_, _| c.radius() * rng.gen::<f64>().powf(s))?;
                Ok(InstanceSample { cost, demand: Vec::new(), supply: Vec::new() })
            }
            Sampler::Sphere(g) => spatial(&|r| g.sample_point(r), &|a, b| g.distance(a, b), rng),
            Sampler::Ball(g) => spatial(&|r| g.sample_point(r), &|a, b| g.distance(a, b), rng),
        }
    }
}

/// Draws the instance identified by `stream`.
pub fn gen_instance(params: &InstanceParams, size: ProblemSize, stream: StreamId) -> Result<InstanceSample> {
    Sampler::new(params)?.draw(size, &mut stream.rng(0))
}

/// Estimator dispatch across the three variants.
pub fn estimate(params: &InstanceParams, size: ProblemSize, mode: EstimateMode, moment: u32) -> Result<EstimateResult> {
    if moment != 1 && params.variant != Variant::I {
        return crate::error::domain("higher moments are only available for i.i.d. costs");
    }
    match params.variant {
        Variant::I => expected_cost(size, PowerLawCost::new(params.radius, params.dim)?, moment, mode),
        Variant::S => expected_optimal_distance_s(size, params.dim, mode),
        Variant::B => expected_optimal_distance_b(size, params.dim, params.p, mode),
    }
}

/// Axis of a sweep grid: one value, an explicit list or an inclusive stepped
/// range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridAxis {
    Single(usize),
    List(Vec<usize>),
    Range { start: usize, end: usize, #[serde(default = "one")] step: usize },
}

fn one() -> usize {
    1
}

impl GridAxis {
    pub fn values(&self) -> Vec<usize> {
        match self {
            GridAxis::Single(v) => vec![*v],
            GridAxis::List(v) => v.clone(),
            GridAxis::Range { start, end, step } => (*start..=*end).step_by((*step).max(1)).collect(),
        }
    }
}

impl From<Vec<usize>> for GridAxis {
    fn from(v: Vec<usize>) -> Self {
        GridAxis::List(v)
    }
}

/// Pass/fail limits applied to a finished sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Largest allowed `rel_err` of any row.
    pub max_rel_err: Option<f64>,
    /// Largest allowed mean `rel_err` per mode.
    pub mean_rel_err: Option<f64>,
}

fn default_instances() -> usize {
    1000
}

fn default_p() -> f64 {
    2.0
}

fn default_radius() -> f64 {
    1.0
}

fn default_modes() -> Vec<EstimateMode> {
    vec![EstimateMode::Refined]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub m: GridAxis,
    pub n: GridAxis,
    pub dim: u32,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_instances")]
    pub instances_per_point: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: Vec<EstimateMode>,
    /// Keep every per-vertex optimal cost in the output.
    #[serde(default)]
    pub retain_samples: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    pub fn new(variant: Variant, m: impl Into<GridAxis>, n: impl Into<GridAxis>, dim: u32) -> Self {
        Self {
            variant,
            m: m.into(),
            n: n.into(),
            dim,
            p: default_p(),
            radius: default_radius(),
            instances_per_point: default_instances(),
            seed: 0,
            modes: default_modes(),
            retain_samples: false,
            thresholds: Thresholds::default(),
        }
    }

    pub fn params(&self) -> InstanceParams {
        InstanceParams { variant: self.variant, dim: self.dim, p: self.p, radius: self.radius }
    }

    /// Grid points in canonical order: `m` outer, `n` inner.
    pub fn points(&self) -> Result<Vec<ProblemSize>> {
        let (ms, ns) = (self.m.values(), self.n.values());
        if ms.is_empty() || ns.is_empty() {
            return Err(Error::Input("empty m or n grid".into()));
        }
        ms.iter()
            .flat_map(|&m| ns.iter().map(move |&n| (m, n)))
            .map(|(m, n)| ProblemSize::new(m, n).map_err(|e| Error::Input(format!("grid point (m={m}, n={n}): {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances_per_point == 0 {
            return Err(Error::Input("instances_per_point must be at least 1".into()));
        }
        self.params().validate()?;
        self.points().map(|_| ())
    }
}

/// Streaming summary of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub m: usize,
    pub n: usize,
    /// Mean optimal per-vertex cost over all vertices of all instances.
    pub sample_mean: f64,
    pub sample_sd: f64,
    /// `m × instances`.
    pub count: usize,
    /// Standard error from the spread of per-instance means.
    pub standard_error: f64,
    pub greedy_mean: f64,
    pub greedy_sd: f64,
    pub greedy_se: f64,
    /// Instances whose greedy total fell below the optimal total (should be 0).
    pub greedy_below_optimal: usize,
    pub samples: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub per_point: Vec<PointStats>,
}

/// One CSV row: an estimator value next to the simulated optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub variant: Variant,
    #[serde(rename = "D")]
    pub dim: u32,
    pub p: f64,
    pub m: usize,
    pub n: usize,
    pub mode: String,
    pub estimate: f64,
    pub sim_mean: f64,
    pub sim_sd: f64,
    pub sim_se: f64,
    /// `|estimate − sim_mean| / sim_mean`.
    pub rel_err: f64,
    pub greedy_mean: f64,
    pub greedy_se: f64,
}

/// A grid point or estimate that could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub m: usize,
    pub n: usize,
    pub mode: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: ExperimentConfig,
    pub stats: SimulationStats,
    pub rows: Vec<VerificationRow>,
    pub failures: Vec<PointFailure>,
}

impl VerificationReport {
    /// Mean `rel_err` over rows of the given mode.
    pub fn mean_rel_err(&self, mode: EstimateMode) -> Option<f64> {
        let name = mode.to_string();
        let errs: Vec<f64> = self.rows.iter().filter(|r| r.mode == name).map(|r| r.rel_err).collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    /// Human-readable descriptions of every threshold violation.
    pub fn threshold_violations(&self) -> Vec<String> {
        let t = self.config.thresholds;
        let mut out = Vec::new();
        if let Some(limit) = t.max_rel_err {
            for r in self.rows.iter().filter(|r| !(r.rel_err <= limit)) {
                out.push(format!("{} m={} n={}: rel_err {:.4} > {limit}", r.mode, r.m, r.n, r.rel_err));
            }
        }
        if let Some(limit) = t.mean_rel_err {
            for &mode in &self.config.modes {
                if let Some(e) = self.mean_rel_err(mode).filter(|e| !(*e <= limit)) {
                    out.push(format!("{mode}: mean rel_err {e:.4} > {limit}"));
                }
            }
        }
        if (t.max_rel_err.is_some() || t.mean_rel_err.is_some()) && !self.failures.is_empty() {
            out.push(format!("{} grid points or estimates failed", self.failures.len()));
        }
        out
    }
}

struct InstanceOutcome {
    optimal: Vec<f64>,
    optimal_total: f64,
    greedy: Vec<f64>,
    greedy_total: f64,
}

fn run_instance(sampler: &Sampler, size: ProblemSize, stream: StreamId) -> Result<InstanceOutcome> {
    let mut rng = stream.rng(0);
    let inst = sampler.draw(size, &mut rng)?;
    let exact = solve_exact(&inst.cost)?;
    let mut order: Vec<usize> = (0..size.m()).collect();
    order.shuffle(&mut rng);
    let greedy = solve_greedy(&inst.cost, &order)?;
    Ok(InstanceOutcome {
        optimal: exact.per_vertex_cost,
        optimal_total: exact.total_cost,
        greedy: greedy.per_vertex_cost,
        greedy_total: greedy.total_cost,
    })
}

/// Mean, sample SD over all values, and SE from the per-instance means.
fn summarize<'a>(per_instance: impl Iterator<Item = &'a [f64]> + Clone) -> (f64, f64, f64) {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in per_instance.clone() {
        sum += v.iter().sum::<f64>();
        count += v.len();
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    let mut means = Vec::new();
    for v in per_instance {
        ss += v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        means.push(v.iter().sum::<f64>() / v.len() as f64);
    }
    let sd = if count > 1 { (ss / (count - 1) as f64).sqrt() } else { 0.0 };
    let k = means.len();
    let se = if k > 1 {
        let mm = means.iter().sum::<f64>() / k as f64;
        (means.iter().map(|x| (x - mm) * (x - mm)).sum::<f64>() / ((k - 1) * k) as f64).sqrt()
    } else {
        sd / (count as f64).sqrt()
    };
    (mean, sd, se)
}

fn simulate_point(sampler: &Sampler, size: ProblemSize, point: u64, config: &ExperimentConfig) -> Result<PointStats> {
    let outcomes: Vec<InstanceOutcome> = (0..config.instances_per_point as u64)
        .into_par_iter()
        .map(|instance| run_instance(sampler, size, StreamId { seed: config.seed, point, instance }))
        .collect::<Result<_>>()?;
    let (sample_mean, sample_sd, standard_error) = summarize(outcomes.iter().map(|o| o.optimal.as_slice()));
    let (greedy_mean, greedy_sd, greedy_se) = summarize(outcomes.iter().map(|o| o.greedy.as_slice()));
    let greedy_below_optimal = outcomes
        .iter()
        .filter(|o| o.greedy_total < o.optimal_total - 1e-9 * o.optimal_total.abs().max(1.0))
        .count();
    let samples = config.retain_samples.then(|| outcomes.iter().flat_map(|o| o.optimal.iter().copied()).collect());
    Ok(PointStats {
        m: size.m(),
        n: size.n(),
        sample_mean,
        sample_sd,
        count: size.m() * config.instances_per_point,
        standard_error,
        greedy_mean,
        greedy_sd,
        greedy_se,
        greedy_below_optimal,
        samples,
    })
}

/// Simulation statistics only, without estimates.
pub fn simulate(config: &ExperimentConfig) -> Result<(SimulationStats, Vec<PointFailure>)> {
    config.validate()?;
    let sampler = Sampler::new(&config.params())?;
    let mut stats = SimulationStats::default();
    let mut failures = Vec::new();
    for (point, size) in config.points()?.into_iter().enumerate() {
        match simulate_point(&sampler, size, point as u64, config) {
            Ok(s) => {
                debug!(m = s.m, n = s.n, mean = s.sample_mean, se = s.standard_error, "simulated point");
                stats.per_point.push(s);
            }
            Err(e) => {
                warn!(m = size.m(), n = size.n(), error = %e, "grid point aborted");
                failures.push(PointFailure { m: size.m(), n: size.n(), mode: None, message: e.to_string() });
            }
        }
    }
    Ok((stats, failures))
}

/// Simulates every grid point and tabulates each requested estimator.
pub fn run_verification(config: &ExperimentConfig) -> Result<VerificationReport> {
    let (stats, mut failures) = simulate(config)?;
    let params = config.params();
    let mut rows = Vec::new();
    for s in &stats.per_point {
        let size = ProblemSize::new(s.m, s.n)?;
        for &mode in &config.modes {
            match estimate(&params, size, mode, 1) {
                Ok(e) => rows.push(VerificationRow {
                    variant: config.variant,
                    dim: config.dim,
                    p: config.p,
                    m: s.m,
                    n: s.n,
                    mode: mode.to_string(),
                    estimate: e.value,
                    sim_mean: s.sample_mean,
                    sim_sd: s.sample_sd,
                    sim_se: s.standard_error,
                    rel_err: (e.value - s.sample_mean).abs() / s.sample_mean,
                    greedy_mean: s.greedy_mean,
                    greedy_se: s.greedy_se,
                }),
                Err(e) => failures.push(PointFailure {
                    m: s.m,
                    n: s.n,
                    mode: Some(mode.to_string()),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(VerificationReport { config: config.clone(), stats, rows, failures })
}

/// Formula SD against sample SD at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentRow {
    pub m: usize,
    pub n: usize,
    pub formula_sd: f64,
    pub sample_sd: f64,
    pub rel_err: f64,
}

/// SD of the per-vertex optimal cost from the refined first and second
/// moments, compared with simulation. i.i.d. costs only.
pub fn second_moment_rows(config: &ExperimentConfig, stats: &SimulationStats) -> Result<Vec<SecondMomentRow>> {
    if config.variant != Variant::I {
        return crate::error::domain("second moments are only available for i.i.d. costs");
    }
    let cost = PowerLawCost::new(config.radius, config.dim)?;
    stats
        .per_point
        .iter()
        .map(|s| {
            let size = ProblemSize::new(s.m, s.n)?;
            let e1 = expected_cost(size, cost, 1, EstimateMode::Refined)?.value;
            let e2 = expected_cost(size, cost, 2, EstimateMode::Refined)?.value;
            let formula_sd = (e2 - e1 * e1).max(0.0).sqrt();
            Ok(SecondMomentRow {
                m: s.m,
                n: s.n,
                formula_sd,
                sample_sd: s.sample_sd,
                rel_err: (formula_sd - s.sample_sd).abs() / s.sample_sd,
            })
        })
        .collect()
}

pub fn second_moment_check(config: &ExperimentConfig) -> Result<Vec<SecondMomentRow>> {
    let (stats, _) = simulate(config)?;
    second_moment_rows(config, &stats)
}
