use std::path::PathBuf;

use clap::Args;
use rbmp_core::montecarlo::{estimate, InstanceParams, Variant};
use rbmp_core::{EstimateMode, ProblemSize};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::Run;

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Cost model: I (i.i.d. power law), S (sphere) or B (ball).
    #[arg(long)]
    pub variant: Variant,
    /// Demand vertices.
    #[arg(long)]
    pub m: usize,
    /// Supply vertices.
    #[arg(long)]
    pub n: usize,
    /// Dimension.
    #[arg(long = "D", visible_alias = "d", value_name = "D")]
    pub dim: u32,
    /// L^p metric exponent (ball only).
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Cost-distribution radius (i.i.d. only, default 1).
    #[arg(long = "R", visible_alias = "r", value_name = "R")]
    pub radius: Option<f64>,
    /// Comma-separated estimator modes: nearest, greedy, kappa<K>, refined,
    /// refined_corrected. `refined` means the corrected estimate for S and B.
    #[arg(long, value_delimiter = ',', default_value = "refined")]
    pub mode: Vec<EstimateMode>,
    /// Raw moment of the per-vertex cost (i.i.d. only).
    #[arg(long, default_value_t = 1)]
    pub moment: u32,
    /// Write the table as CSV (plus a manifest) to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub variant: Variant,
    #[serde(rename = "D")]
    pub dim: u32,
    pub p: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub m: usize,
    pub n: usize,
    pub mode: String,
    pub moment: u32,
    pub estimate: f64,
}

fn effective_mode(variant: Variant, mode: EstimateMode) -> EstimateMode {
    match (variant, mode) {
        (Variant::S | Variant::B, EstimateMode::Refined) => EstimateMode::RefinedCorrected,
        _ => mode,
    }
}

pub fn rows(args: &EstimateArgs) -> CliResult<Vec<EstimateRow>> {
    if args.variant != Variant::I && args.radius.is_some_and(|r| r != 1.0) {
        return Err(CliError::Usage("--R only applies to variant I; S and B have unit volume".into()));
    }
    let radius = args.radius.unwrap_or(1.0);
    let params = InstanceParams::new(args.variant, args.dim, args.p, radius)?;
    let size = ProblemSize::new(args.m, args.n)?;
    args.mode
        .iter()
        .map(|&requested| {
            let mode = effective_mode(args.variant, requested);
            let est = estimate(&params, size, mode, args.moment)?;
            Ok(EstimateRow {
                variant: args.variant,
                dim: args.dim,
                p: args.p,
                radius,
                m: args.m,
                n: args.n,
                mode: mode.to_string(),
                moment: args.moment,
                estimate: est.value,
            })
        })
        .collect()
}

pub fn run(args: &EstimateArgs) -> CliResult<()> {
    let rows = rows(args)?;
    println!("{:<7} {:>3} {:>5} {:>5} {:>7} {:>7} {:<18} {:>6} {:>14}", "variant", "D", "p", "R", "m", "n", "mode", "moment", "estimate");
    for r in &rows {
        println!(
            "{:<7} {:>3} {:>5} {:>5} {:>7} {:>7} {:<18} {:>6} {:>14.8}",
            r.variant.to_string(), r.dim, r.p, r.radius, r.m, r.n, r.mode, r.moment, r.estimate
        );
    }
    if let Some(out) = &args.out {
        let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
        let file = out.file_name().ok_or_else(|| CliError::Usage(format!("--out {} is not a file path", out.display())))?;
        let file = file.to_string_lossy();
        let (stem, suffix) = match file.rfind('.') {
            Some(i) if i > 0 => (&file[..i], &file[i..]),
            _ => (&file[..], ""),
        };
        let mut run = Run::start("estimate", &rows, None, dir, stem)?;
        run.write_csv(suffix, &rows)?;
        run.finish()?;
    }
    Ok(())
}
