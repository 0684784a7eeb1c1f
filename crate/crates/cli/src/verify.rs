use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rbmp_core::montecarlo::{run_verification, ExperimentConfig, PointFailure, VerificationReport};
use serde::Serialize;
use tracing::{info, warn};

use crate::error::{CliError, CliResult};
use crate::output::{Run, VERSION};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Sweep definition, TOML or JSON (chosen by the `.json` extension).
    pub config: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// File stem for the outputs.
    #[arg(long, default_value = "verify")]
    pub name: String,
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let config_err = |message: String| CliError::Config { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(|e| config_err(e.to_string()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg: ExperimentConfig = if is_json {
        serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| config_err(e.to_string()))?
    };
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct PointSummary {
    m: usize,
    n: usize,
    sample_mean: f64,
    sample_sd: f64,
    standard_error: f64,
    count: usize,
    greedy_mean: f64,
    greedy_se: f64,
    greedy_below_optimal: usize,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    version: &'static str,
    manifest: String,
    config: &'a ExperimentConfig,
    rows: usize,
    mean_rel_err: BTreeMap<String, f64>,
    max_rel_err: BTreeMap<String, f64>,
    points: Vec<PointSummary>,
    failures: &'a [PointFailure],
    threshold_violations: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SampleRow {
    m: usize,
    n: usize,
    index: usize,
    cost: f64,
}

fn summarize<'a>(report: &'a VerificationReport, manifest: String) -> Summary<'a> {
    let mut mean = BTreeMap::new();
    let mut max = BTreeMap::new();
    for &mode in &report.config.modes {
        let name = mode.to_string();
        if let Some(v) = report.mean_rel_err(mode) {
            mean.insert(name.clone(), v);
        }
        if let Some(v) = report.rows.iter().filter(|r| r.mode == name).map(|r| r.rel_err).reduce(f64::max) {
            max.insert(name, v);
        }
    }
    Summary {
        version: VERSION,
        manifest,
        config: &report.config,
        rows: report.rows.len(),
        mean_rel_err: mean,
        max_rel_err: max,
        points: report
            .stats
            .per_point
            .iter()
            .map(|p| PointSummary {
                m: p.m,
                n: p.n,
                sample_mean: p.sample_mean,
                sample_sd: p.sample_sd,
                standard_error: p.standard_error,
                count: p.count,
                greedy_mean: p.greedy_mean,
                greedy_se: p.greedy_se,
                greedy_below_optimal: p.greedy_below_optimal,
            })
            .collect(),
        failures: &report.failures,
        threshold_violations: report.threshold_violations(),
    }
}

pub fn run(args: &VerifyArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    info!(points = cfg.points()?.len(), instances = cfg.instances_per_point, "starting sweep");
    let mut run = Run::start("verify", &cfg, Some(cfg.seed), &args.out, &args.name)?;
    let report = run_verification(&cfg)?;
    for f in &report.failures {
        warn!(m = f.m, n = f.n, mode = ?f.mode, "{}", f.message);
    }
    let csv = run.write_csv(".csv", &report.rows)?;
    if cfg.retain_samples {
        let samples = report.stats.per_point.iter().flat_map(|p| {
            p.samples.iter().flatten().enumerate().map(|(index, &cost)| SampleRow { m: p.m, n: p.n, index, cost })
        });
        run.write_csv(".samples.csv", samples)?;
    }
    let summary = summarize(&report, run.manifest_name());
    run.write_json(".json", &summary)?;
    run.finish()?;
    for (mode, v) in &summary.mean_rel_err {
        println!("{mode}: mean rel_err {v:.4}, max {:.4}", summary.max_rel_err[mode]);
    }
    println!("wrote {} rows to {}", report.rows.len(), csv.display());
    if summary.threshold_violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Thresholds(summary.threshold_violations))
    }
}
