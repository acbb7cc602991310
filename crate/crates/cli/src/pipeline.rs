//! Pipeline stages shared by the subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dcaccel_core::error::Error;
use dcaccel_core::filter::{design_filter, extract_region, sample_region, DesignOptions};
use dcaccel_core::girko::{integrate_density, map_xi_density_to_w, CeOptions, GeneralModel, ScalarModel};
use dcaccel_core::graph_models::{mean_spectrum, scaling_gamma, variance_profile};
use dcaccel_core::spectral::{expected_density_mc, McOptions};
use dcaccel_core::{DensityGrid, DensityReport, Filter, Region, SamplePoints, SbmConfig};
use nalgebra::Complex;
use serde::Serialize;

use crate::cache::{content_hash, Cache};
use crate::config::{GridSection, ModelSection, RunConfig, SimSection};
use crate::CliError;

/// Largest size for which the general canonical equations are used when the
/// model is not node-transitive.
const GENERAL_SOLVER_LIMIT: usize = 500;

pub struct Context {
    pub config: RunConfig,
    pub sbm: SbmConfig,
    pub output: PathBuf,
    pub cache: Cache,
}

impl Context {
    pub fn new(config: RunConfig, output: PathBuf, force: bool) -> Result<Self, CliError> {
        config.validate()?;
        let sbm = config.sbm()?;
        fs::create_dir_all(&output)?;
        let cache = Cache::new(&output, force);
        Ok(Self { config, sbm, output, cache })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    pub fn config_hash(&self) -> String {
        content_hash(&self.config_without_output())
    }

    fn config_without_output(&self) -> RunConfig {
        RunConfig { output: Default::default(), ..self.config.clone() }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn note(msg: &str) {
    eprintln!("{msg}");
}

#[derive(Serialize)]
struct GirkoKey<'a> {
    model: &'a ModelSection,
    grid: &'a GridSection,
}

#[derive(Debug, Clone)]
pub struct GirkoStage {
    /// Density of the iteration-matrix spectrum on the configured plane.
    pub density: DensityGrid,
    pub report: DensityReport,
    pub cached: bool,
}

/// Deterministic density of `W`, computed in the scaled-adjacency plane and
/// mapped back.
pub fn girko_density(ctx: &Context) -> Result<GirkoStage, CliError> {
    let key = GirkoKey { model: &ctx.config.model, grid: &ctx.config.grid };
    let entry = ctx.cache.entry("girko", &key);
    if ctx.cache.is_hit(&entry) {
        let density = DensityGrid::read_csv(BufReader::new(File::open(entry.dir.join("density.csv"))?))?;
        let report: DensityReport = serde_json::from_reader(BufReader::new(File::open(entry.dir.join("report.json"))?))
            ?;
        note(&format!("cache hit: girko density ({})", entry.key));
        return Ok(GirkoStage { density, report, cached: true });
    }
    let alpha = ctx.sbm.alpha();
    let w_spec = ctx.config.grid_spec()?;
    let xi_spec = w_spec.with_plane(w_spec.plane().preimage(alpha));
    let opts = CeOptions { tol: ctx.config.grid.tol, max_iter: ctx.config.grid.max_iter };
    let out = match ScalarModel::from_sbm(&ctx.sbm) {
        Ok(model) => integrate_density(&model, &xi_spec, &opts)?,
        Err(Error::NodeTransitivityViolation { .. }) if ctx.sbm.node_count() <= GENERAL_SOLVER_LIMIT => {
            integrate_density(&GeneralModel::from_sbm(&ctx.sbm)?, &xi_spec, &opts)?
        }
        Err(e) => return Err(e.into()),
    };
    let density = map_xi_density_to_w(&out.density, alpha, Some(&w_spec.plane()))?;
    let report = DensityReport { mass: density.mass(), ..out.report };
    ctx.cache.store(&entry, &key, |dir| {
        density.write_csv(create(&dir.join("density.csv"))?)?;
        serde_json::to_writer_pretty(create(&dir.join("report.json"))?, &report)?;
        Ok(())
    })?;
    Ok(GirkoStage { density, report, cached: false })
}

#[derive(Serialize)]
struct McKey<'a> {
    model: &'a ModelSection,
    grid: &'a GridSection,
    sim: &'a SimSection,
}

#[derive(Debug, Clone)]
pub struct McStage {
    pub density: DensityGrid,
    /// Per-trial report text.
    pub report: String,
    /// Non-consensus eigenvalues pooled over the averaged trials.
    pub pooled: Vec<Complex<f64>>,
    pub averaged: usize,
    pub failed: usize,
    pub disconnected: usize,
    pub cached: bool,
}

fn write_pooled(path: &Path, pooled: &[Complex<f64>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "re,im")?;
    for z in pooled {
        writeln!(w, "{},{}", z.re, z.im)?;
    }
    w.flush()?;
    Ok(())
}

fn read_pooled(path: &Path) -> Result<Vec<Complex<f64>>, CliError> {
    let bad = |l: &str| CliError::Run(Error::Parse(format!("bad eigenvalue row {l:?}")));
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines().skip(1) {
        let line = line?;
        let (a, b) = line.split_once(',').ok_or_else(|| bad(&line))?;
        out.push(Complex::new(a.parse().map_err(|_| bad(&line))?, b.parse().map_err(|_| bad(&line))?));
    }
    Ok(out)
}

fn count_line(report: &str, label: &str) -> usize {
    report
        .lines()
        .find_map(|l| l.strip_prefix(label).and_then(|v| v.trim().parse().ok()))
        .unwrap_or(0)
}

/// Monte-Carlo expected empirical density of `W`.
pub fn mc_density(ctx: &Context) -> Result<McStage, CliError> {
    let key = McKey { model: &ctx.config.model, grid: &ctx.config.grid, sim: &ctx.config.sim };
    let entry = ctx.cache.entry("montecarlo", &key);
    let summarize = |density, report: String, pooled, cached| {
        let averaged = count_line(&report, "averaged ");
        let failed = count_line(&report, "failed ");
        let disconnected = count_line(&report, "disconnected ");
        McStage { density, report, pooled, averaged, failed, disconnected, cached }
    };
    if ctx.cache.is_hit(&entry) {
        let density = DensityGrid::read_csv(BufReader::new(File::open(entry.dir.join("density.csv"))?))?;
        let report = fs::read_to_string(entry.dir.join("report.txt"))?;
        let pooled = read_pooled(&entry.dir.join("eigenvalues.csv"))?;
        note(&format!("cache hit: monte-carlo density ({})", entry.key));
        return Ok(summarize(density, report, pooled, true));
    }
    let sim = &ctx.config.sim;
    let opts = McOptions { exclude_disconnected: sim.exclude_disconnected, max_sample_attempts: sim.max_sample_attempts };
    let mc = expected_density_mc(&ctx.sbm, sim.trials, &ctx.config.plane()?, sim.base_seed, &opts)?;
    let mut buf = Vec::new();
    mc.write_report(&mut buf)?;
    let report = String::from_utf8(buf).expect("report is utf-8");
    let pooled: Vec<Complex<f64>> = mc.spectra.iter().flat_map(|s| s.without_consensus()).collect();
    ctx.cache.store(&entry, &key, |dir| {
        mc.density.write_csv(create(&dir.join("density.csv"))?)?;
        fs::write(dir.join("report.txt"), &report)?;
        write_pooled(&dir.join("eigenvalues.csv"), &pooled)
    })?;
    Ok(summarize(mc.density, report, pooled, false))
}

pub fn region(ctx: &Context, density: &DensityGrid) -> Result<Region, CliError> {
    Ok(extract_region(density, ctx.config.region.kappa, ctx.config.region.tau)?)
}

pub struct Designs {
    pub region: Region,
    pub points: SamplePoints,
    pub filters: BTreeMap<usize, Filter>,
}

/// Region, sample points and one minimax filter per configured degree.
pub fn design(ctx: &Context, density: &DensityGrid) -> Result<Designs, CliError> {
    let region = region(ctx, density)?;
    let points = sample_region(&region, ctx.config.design.max_points)?;
    let opts = DesignOptions { tol: ctx.config.design.tol, ..DesignOptions::default() };
    let mut degrees = ctx.config.design.degrees.clone();
    degrees.sort_unstable();
    degrees.dedup();
    let filters = degrees
        .into_iter()
        .map(|d| design_filter(&points, d, &opts).map(|f| (d, f)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(Designs { region, points, filters })
}

/// Fraction of `points` inside the region.
pub fn coverage(region: &Region, points: &[Complex<f64>]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    points.iter().filter(|&&z| region.contains(z)).count() as f64 / points.len() as f64
}

/// L1 distance between two densities, leaving out cells within `kappa` of 1.
pub fn l1_outside_kappa(a: &DensityGrid, b: &DensityGrid, kappa: f64) -> Result<f64, CliError> {
    Ok(a.l1_distance(b, |z| (z - 1.0).norm() > kappa)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub nodes: usize,
    pub gamma: f64,
    pub scaled_row_variance: f64,
    pub mean_w_eigenvalues: Vec<(f64, usize)>,
}

pub fn model_summary(sbm: &SbmConfig) -> Result<ModelSummary, CliError> {
    let row_var = match variance_profile(sbm, true) {
        Ok(v) => v.row_sum(),
        Err(Error::NodeTransitivityViolation { .. }) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    Ok(ModelSummary {
        nodes: sbm.node_count(),
        gamma: scaling_gamma(sbm)?,
        scaled_row_variance: row_var,
        mean_w_eigenvalues: mean_spectrum(sbm, true)?.to_iteration(sbm.alpha()).values().to_vec(),
    })
}
