use std::path::PathBuf;

use clap::{Args, Subcommand};
use rayon::prelude::*;
use rbmp_core::mobility::{
    closed_loop_equilibria, cobb_douglas_params, default_tau_grid, minimum_fleet, optimize_closed_loop,
    optimize_open_loop, simulate_closed_loop, simulate_open_loop, ClosedLoopConfig, ClosedLoopScenario, DistanceModel,
    EquilibriumKind, OpenLoopScenario,
};
use rbmp_core::EstimateMode;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::Run;

#[derive(Debug, Subcommand)]
pub enum MobilityCommand {
    /// Best pooling interval for an open-loop scenario.
    OptimizeOpen(OpenArgs),
    /// Equilibria and best pooling interval for a closed fleet.
    OptimizeClosed(ClosedArgs),
    /// Simulate one pooling interval per τ and compare with the model.
    SimulateOpen(SimOpenArgs),
    /// Event-driven simulation of a closed fleet per τ.
    SimulateClosed(SimClosedArgs),
    /// Smallest fleet with a steady state at τ.
    MinFleet(MinFleetArgs),
    /// Cobb-Douglas matching-rate parameters.
    Cobb(CobbArgs),
}

fn parse_model(s: &str) -> Result<DistanceModel, String> {
    match s.parse::<EstimateMode>() {
        Ok(EstimateMode::Kappa(k)) => Ok(DistanceModel::Kappa(k)),
        Ok(EstimateMode::RefinedCorrected | EstimateMode::Refined) => Ok(DistanceModel::RefinedCorrected),
        _ => Err(format!("unknown distance model {s:?}, expected kappa<K> or refined_corrected")),
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Value of time: weight of the pooling wait against pickup distance.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// L^p metric exponent.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Comma-separated pooling intervals; default is ten points from 1/λ to 0.1.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Pickup-distance model: kappa<K> or refined_corrected.
    #[arg(long = "distance-model", default_value = "kappa0", value_parser = parse_model)]
    pub model: DistanceModel,
    /// Output directory for CSV and JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// File stem for the outputs (defaults to the subcommand name).
    #[arg(long)]
    pub name: Option<String>,
}

impl Common {
    fn grid(&self, lambda: f64) -> CliResult<Vec<f64>> {
        let taus = self.taus.clone().unwrap_or_else(|| default_tau_grid(lambda));
        if taus.is_empty() || taus.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(CliError::Usage("--taus must be positive numbers".into()));
        }
        Ok(taus)
    }
}

#[derive(Debug, Args)]
pub struct OpenArgs {
    /// Customer arrival rate λ.
    #[arg(long)]
    pub lambda: f64,
    /// Vehicle arrival rate λ′.
    #[arg(long = "lambda-prime")]
    pub lambda_prime: f64,
    /// Idle vehicles at the start of the interval.
    #[arg(long = "ni")]
    pub n_i: f64,
    #[command(flatten)]
    pub common: Common,
}

impl OpenArgs {
    fn scenario(&self) -> OpenLoopScenario {
        OpenLoopScenario {
            lambda: self.lambda,
            lambda_prime: self.lambda_prime,
            n_i: self.n_i,
            gamma: self.common.gamma,
            p: self.common.p,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClosedArgs {
    /// Customer arrival rate λ.
    #[arg(long)]
    pub lambda: f64,
    /// Fleet size S.
    #[arg(long)]
    pub fleet: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimOpenArgs {
    #[command(flatten)]
    pub open: OpenArgs,
    /// Replications per τ; default round(30/τ).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimClosedArgs {
    #[command(flatten)]
    pub closed: ClosedArgs,
    #[arg(long, default_value_t = 30.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 6.0)]
    pub warmup: f64,
    /// Batches for batch-means standard errors.
    #[arg(long, default_value_t = 10)]
    pub batches: usize,
    /// Record vehicle states every this many epochs (0 disables).
    #[arg(long = "trajectory-stride", default_value_t = 0)]
    pub trajectory_stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MinFleetArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Pooling interval; default 1/λ.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "distance-model", default_value = "kappa0", value_parser = parse_model)]
    pub model: DistanceModel,
}

#[derive(Debug, Args)]
pub struct CobbArgs {
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
}

/// One row of the per-τ CSV.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TauRow {
    pub tau: f64,
    pub model_objective: Option<f64>,
    pub sim_mean: Option<f64>,
    pub sim_se: Option<f64>,
    pub n_i_root_efficient: Option<f64>,
    pub n_i_root_inefficient: Option<f64>,
    pub lost_fraction: Option<f64>,
}

fn print_rows(rows: &[TauRow]) {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    println!(
        "{:>10} {:>12} {:>12} {:>10} {:>10} {:>10} {:>8}",
        "tau", "model", "sim_mean", "sim_se", "n_i_eff", "n_i_ineff", "lost"
    );
    for r in rows {
        println!(
            "{:>10.6} {:>12} {:>12} {:>10} {:>10} {:>10} {:>8}",
            r.tau,
            f(r.model_objective),
            f(r.sim_mean),
            f(r.sim_se),
            f(r.n_i_root_efficient),
            f(r.n_i_root_inefficient),
            f(r.lost_fraction)
        );
    }
}

#[derive(Serialize)]
struct Report<'a, S: Serialize, R: Serialize> {
    version: &'static str,
    manifest: String,
    command: &'a str,
    scenario: S,
    distance_model: DistanceModel,
    seed: Option<u64>,
    tau_star: Option<f64>,
    result: R,
}

#[allow(clippy::too_many_arguments)]
fn emit<S: Serialize + Clone, R: Serialize>(
    common: &Common,
    command: &str,
    scenario: S,
    seed: Option<u64>,
    tau_star: Option<f64>,
    rows: &[TauRow],
    result: R,
    extra: impl FnOnce(&mut Run) -> CliResult<()>,
) -> CliResult<()> {
    print_rows(rows);
    let Some(dir) = &common.out else { return Ok(()) };
    let name = common.name.clone().unwrap_or_else(|| command.to_string());
    let mut run = Run::start(command, &scenario, seed, dir, &name)?;
    run.write_csv(".csv", rows)?;
    extra(&mut run)?;
    let report = Report {
        version: crate::output::VERSION,
        manifest: run.manifest_name(),
        command,
        scenario,
        distance_model: common.model,
        seed,
        tau_star,
        result,
    };
    run.write_json(".json", &report)?;
    run.finish()?;
    Ok(())
}

fn closed_scenario(args: &ClosedArgs) -> CliResult<ClosedLoopScenario> {
    Ok(ClosedLoopScenario::new(args.lambda, args.fleet, args.common.gamma, args.common.p)?)
}

fn tau_row_from_roots(tau: f64, sc: &ClosedLoopScenario, model: DistanceModel) -> CliResult<TauRow> {
    let roots = match closed_loop_equilibria(tau, sc, model) {
        Ok(r) => r,
        Err(rbmp_core::Error::Infeasible(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let pick = |k| roots.iter().find(|r| r.kind == k);
    let eff = pick(EquilibriumKind::Efficient);
    Ok(TauRow {
        tau,
        model_objective: eff.map(|r| r.objective),
        n_i_root_efficient: eff.map(|r| r.n_i),
        n_i_root_inefficient: pick(EquilibriumKind::Inefficient).map(|r| r.n_i),
        ..Default::default()
    })
}

pub fn run(cmd: &MobilityCommand) -> CliResult<()> {
    match cmd {
        MobilityCommand::Cobb(a) => {
            let c = cobb_douglas_params(a.p)?;
            println!("alpha0 = {}", c.alpha0);
            println!("alpha1 = {}", c.alpha1);
            println!("alpha2 = {}", c.alpha2);
            println!("validity = {}", serde_json::to_value(c.validity)?.as_str().unwrap_or("unknown"));
            Ok(())
        }
        MobilityCommand::MinFleet(a) => {
            let s = minimum_fleet(a.lambda, a.p, a.tau, a.model)?;
            println!("{s}");
            Ok(())
        }
        MobilityCommand::OptimizeOpen(a) => {
            let sc = a.scenario();
            let grid = a.common.grid(a.lambda)?;
            let opt = optimize_open_loop(&sc, &grid, a.common.model)?;
            let rows: Vec<TauRow> =
                opt.curve.iter().map(|c| TauRow { tau: c.tau, model_objective: c.objective, ..Default::default() }).collect();
            let regime = serde_json::to_value(opt.regime)?;
            emit(&a.common, "optimize-open", sc, None, Some(opt.tau_star), &rows, &opt, |_| Ok(()))?;
            println!("tau_star = {}", opt.tau_star);
            println!("objective_star = {}", opt.objective_star);
            println!("regime = {}", regime.as_str().unwrap_or_default());
            Ok(())
        }
        MobilityCommand::OptimizeClosed(a) => {
            let sc = closed_scenario(a)?;
            let grid = a.common.grid(a.lambda)?;
            let opt = optimize_closed_loop(&sc, &grid, a.common.model)?;
            let rows = grid.iter().map(|&t| tau_row_from_roots(t, &sc, a.common.model)).collect::<CliResult<Vec<_>>>()?;
            emit(&a.common, "optimize-closed", sc, None, opt.tau_star, &rows, &opt, |_| Ok(()))?;
            match opt.tau_star {
                Some(t) => println!("tau_star = {t}"),
                None => return Err(rbmp_core::Error::Infeasible(format!("fleet {} has no steady state on the grid", a.fleet)).into()),
            }
            Ok(())
        }
        MobilityCommand::SimulateOpen(a) => {
            let sc = a.open.scenario();
            let common = &a.open.common;
            let grid = common.grid(a.open.lambda)?;
            let mut rows = Vec::with_capacity(grid.len());
            let mut sims = Vec::with_capacity(grid.len());
            for &tau in &grid {
                let reps = a.reps.unwrap_or_else(|| ((30.0 / tau).round() as usize).max(1));
                let sim = simulate_open_loop(&sc, tau, reps, a.seed)?;
                let model = match sc.objective(tau, common.model) {
                    Ok(v) => Some(v),
                    Err(rbmp_core::Error::Infeasible(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                rows.push(TauRow {
                    tau,
                    model_objective: model,
                    sim_mean: Some(sim.objective.mean),
                    sim_se: Some(sim.objective.standard_error),
                    lost_fraction: Some(sim.surplus_flagged as f64 / sim.replications as f64),
                    ..Default::default()
                });
                sims.push(sim);
            }
            let tau_star = rows.iter().min_by(|x, y| x.sim_mean.unwrap().total_cmp(&y.sim_mean.unwrap())).map(|r| r.tau);
            emit(common, "simulate-open", sc, Some(a.seed), tau_star, &rows, &sims, |_| Ok(()))?;
            if let Some(t) = tau_star {
                println!("tau_star (simulated) = {t}");
            }
            Ok(())
        }
        MobilityCommand::SimulateClosed(a) => {
            let sc = closed_scenario(&a.closed)?;
            let common = &a.closed.common;
            let grid = common.grid(a.closed.lambda)?;
            let cfg = ClosedLoopConfig {
                horizon: a.horizon,
                warmup: a.warmup,
                seed: a.seed,
                batches: a.batches,
                trajectory_stride: a.trajectory_stride,
            };
            // each simulation is sequential; the τ grid runs in parallel, collected in order
            let sims = grid.par_iter().map(|&tau| simulate_closed_loop(&sc, tau, cfg)).collect::<Result<Vec<_>, _>>()?;
            let rows = grid
                .iter()
                .zip(&sims)
                .map(|(&tau, sim)| {
                    let mut row = tau_row_from_roots(tau, &sc, common.model)?;
                    row.sim_mean = Some(sim.objective.mean);
                    row.sim_se = Some(sim.objective.standard_error);
                    row.lost_fraction = Some(sim.lost_fraction);
                    Ok(row)
                })
                .collect::<CliResult<Vec<_>>>()?;
            let tau_star = rows.iter().min_by(|x, y| x.sim_mean.unwrap().total_cmp(&y.sim_mean.unwrap())).map(|r| r.tau);
            #[derive(Serialize)]
            struct TrajRow {
                tau: f64,
                t: f64,
                idle: usize,
                assigned: usize,
                in_service: usize,
            }
            let traj = |run: &mut Run| -> CliResult<()> {
                if a.trajectory_stride > 0 {
                    let rows = sims.iter().flat_map(|s| {
                        s.trajectory.iter().map(|x| TrajRow {
                            tau: s.tau,
                            t: x.t,
                            idle: x.idle,
                            assigned: x.assigned,
                            in_service: x.in_service,
                        })
                    });
                    run.write_csv(".trajectory.csv", rows)?;
                }
                Ok(())
            };
            emit(common, "simulate-closed", sc, Some(a.seed), tau_star, &rows, &sims, traj)?;
            let violations: usize = sims.iter().map(|s| s.conservation_violations).sum();
            if violations > 0 {
                tracing::error!(violations, "vehicle conservation broken");
            }
            if let Some(t) = tau_star {
                println!("tau_star (simulated) = {t}");
            }
            Ok(())
        }
    }
}
