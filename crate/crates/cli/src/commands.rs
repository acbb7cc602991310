//! The four subcommands. Each writes its artifacts into the output directory
//! and returns a summary for callers that want the numbers directly.

use std::collections::BTreeMap;
use std::io::Write;

use dcaccel_core::consensus::{compare_filters, simulated_rate, CompareOptions};
use dcaccel_core::error::Error;
use dcaccel_core::filter::DesignOptions;
use dcaccel_core::graph_models::{iteration_matrix, sample_sbm_retry};
use dcaccel_core::spectral::{convergence_factor, eigenvalues, left_perron, trial_seed};
use dcaccel_core::consensus::Comparison;
use dcaccel_core::{DensityReport, Filter, MatrixKind};
use serde::Serialize;

use crate::pipeline::{self, create, Context, ModelSummary};
use crate::validate::{run_checks, Check};
use crate::CliError;

/// Tolerance of the Perron vector used for the trajectory cross-check.
const PERRON_TOL: f64 = 1e-15;
const PERRON_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub averaged: usize,
    pub failed: usize,
    pub disconnected: usize,
    /// L1 distance to the deterministic density outside the `kappa` ball.
    pub l1_distance: f64,
    /// Fraction of pooled non-consensus eigenvalues inside the region.
    pub region_coverage: f64,
    pub pooled_eigenvalues: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensitySummary {
    pub config_hash: String,
    pub model: ModelSummary,
    pub girko: DensityReport,
    pub region_cells: usize,
    pub consensus_cells_dropped: usize,
    pub monte_carlo: Option<MonteCarloSummary>,
}

pub fn cmd_density(ctx: &Context) -> Result<DensitySummary, CliError> {
    let girko = pipeline::girko_density(ctx)?;
    girko.density.write_csv(create(&ctx.path("girko_density.csv"))?)?;
    serde_json::to_writer_pretty(create(&ctx.path("girko_report.json"))?, &girko.report)?;
    let region = pipeline::region(ctx, &girko.density)?;
    region.write_boundary_csv(create(&ctx.path("region_boundary.csv"))?)?;

    let monte_carlo = if ctx.config.sim.trials > 0 {
        let mc = pipeline::mc_density(ctx)?;
        mc.density.write_csv(create(&ctx.path("empirical_density.csv"))?)?;
        std::fs::write(ctx.path("mc_report.txt"), &mc.report)?;
        Some(MonteCarloSummary {
            averaged: mc.averaged,
            failed: mc.failed,
            disconnected: mc.disconnected,
            l1_distance: pipeline::l1_outside_kappa(&girko.density, &mc.density, ctx.config.region.kappa)?,
            region_coverage: pipeline::coverage(&region, &mc.pooled),
            pooled_eigenvalues: mc.pooled.len(),
        })
    } else {
        None
    };
    let summary = DensitySummary {
        config_hash: ctx.config_hash(),
        model: pipeline::model_summary(&ctx.sbm)?,
        girko: girko.report,
        region_cells: region.cell_count(),
        consensus_cells_dropped: region.consensus_cells_dropped(),
        monte_carlo,
    };
    serde_json::to_writer_pretty(create(&ctx.path("metadata.json"))?, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
struct RegionInfo {
    kappa: f64,
    tau: f64,
    cells: usize,
    consensus_cells_dropped: usize,
}

#[derive(Debug, Clone, Serialize)]
struct PointsInfo {
    scheme: String,
    count: usize,
    spacing: f64,
    file: String,
}

#[derive(Debug, Clone, Serialize)]
struct FilterFile<'a> {
    degree: usize,
    coefficients: &'a [f64],
    achieved_epsilon: f64,
    coefficient_sum: f64,
    region: &'a RegionInfo,
    sample_points: &'a PointsInfo,
    config_hash: &'a str,
}

pub fn cmd_design(ctx: &Context) -> Result<BTreeMap<usize, Filter>, CliError> {
    let girko = pipeline::girko_density(ctx)?;
    let designs = match pipeline::design(ctx, &girko.density) {
        Err(CliError::Run(e @ Error::EmptyRegion { .. })) => {
            eprintln!("{e}; try a smaller region.tau or a grid that covers the spectrum");
            return Err(e.into());
        }
        other => other?,
    };
    let mut w = create(&ctx.path("sample_points.csv"))?;
    writeln!(w, "re,im")?;
    for z in &designs.points.points {
        writeln!(w, "{},{}", z.re, z.im)?;
    }
    w.flush()?;
    let region = RegionInfo {
        kappa: designs.region.kappa(),
        tau: designs.region.tau(),
        cells: designs.region.cell_count(),
        consensus_cells_dropped: designs.region.consensus_cells_dropped(),
    };
    let points = PointsInfo {
        scheme: designs.points.scheme.clone(),
        count: designs.points.len(),
        spacing: designs.points.spacing,
        file: "sample_points.csv".into(),
    };
    let hash = ctx.config_hash();
    for (d, f) in &designs.filters {
        let file = FilterFile {
            degree: *d,
            coefficients: f.coefficients(),
            achieved_epsilon: f.achieved_epsilon(),
            coefficient_sum: f.coefficients().iter().sum(),
            region: &region,
            sample_points: &points,
            config_hash: &hash,
        };
        serde_json::to_writer_pretty(create(&ctx.path(&format!("filter_d{d}.json")))?, &file)?;
    }
    Ok(designs.filters)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub trial_seed: u64,
    pub degree: Option<usize>,
    pub spectral_rate: f64,
    pub simulated_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config_hash: String,
    pub trials: usize,
    pub failed: usize,
    pub disconnected: usize,
    pub degrees: Vec<usize>,
    pub trajectory_cross_check: Vec<CrossCheck>,
}

/// Simulated against spectral rates on the first realization.
fn cross_check(ctx: &Context, filters: &BTreeMap<usize, Filter>) -> Result<Vec<CrossCheck>, CliError> {
    let seed = trial_seed(ctx.config.sim.base_seed, 0);
    let (graph, info) = sample_sbm_retry(&ctx.sbm, seed, ctx.config.sim.max_sample_attempts)?;
    let w = iteration_matrix(&graph, ctx.sbm.alpha())?;
    let spectrum = eigenvalues(w.matrix(), MatrixKind::W, Some(info.seed))?;
    let projector = left_perron(&w, PERRON_TOL, PERRON_MAX_ITER)?;
    let n_iters = ctx.config.sim.n_iters;
    let mut out = Vec::new();
    let cases = std::iter::once((None, None)).chain(filters.iter().map(|(d, f)| (Some(*d), Some(f))));
    for (degree, filter) in cases {
        let steps = n_iters - n_iters % degree.unwrap_or(1);
        let simulated = match simulated_rate(&w, &projector, filter, steps, info.seed) {
            Ok(r) => r,
            Err(Error::RateUndefined(_)) | Err(Error::InvalidInput(_)) => f64::NAN,
            Err(e) => return Err(e.into()),
        };
        out.push(CrossCheck {
            trial_seed: info.seed,
            degree,
            spectral_rate: convergence_factor(&spectrum, filter),
            simulated_rate: simulated,
        });
    }
    Ok(out)
}

pub fn cmd_compare(ctx: &Context) -> Result<Comparison, CliError> {
    let sim = &ctx.config.sim;
    if sim.trials == 0 {
        return Err(CliError::Config("sim.trials must be positive to compare filters".into()));
    }
    let filters = cmd_design(ctx)?;
    let opts = CompareOptions {
        design: DesignOptions { tol: ctx.config.design.tol, ..DesignOptions::default() },
        max_sample_attempts: sim.max_sample_attempts,
        exclude_disconnected: sim.exclude_disconnected,
    };
    let comparison = compare_filters(&ctx.sbm, &filters, sim.trials, sim.base_seed, &opts)?;
    comparison.table.write_csv(create(&ctx.path("comparison.csv"))?)?;
    comparison.write_trial_csv(create(&ctx.path("trial_rates.csv"))?)?;
    let report = CompareReport {
        config_hash: ctx.config_hash(),
        trials: comparison.trials.len(),
        failed: comparison.failed(),
        disconnected: comparison.trials.iter().filter(|t| t.failure.is_none() && !t.connected).count(),
        degrees: filters.keys().copied().collect(),
        trajectory_cross_check: cross_check(ctx, &filters)?,
    };
    serde_json::to_writer_pretty(create(&ctx.path("compare_report.json"))?, &report)?;
    Ok(comparison)
}

/// Runs the invariant suite, printing one line per property.
pub fn cmd_validate(config: &crate::RunConfig) -> Result<Vec<Check>, CliError> {
    config.validate()?;
    let checks = run_checks(config)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks)
}
