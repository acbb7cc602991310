//! Invariant suite behind `dcaccel validate`.

use dcaccel_core::consensus::{default_x0, run_consensus, run_consensus_polynomial};
use dcaccel_core::filter::{build_q, design_filter, extract_region, sample_region, DesignOptions};
use dcaccel_core::girko::{integrate_density, map_xi_density_to_w, scalar_ce_residual, CeOptions, GeneralModel, ScalarModel};
use dcaccel_core::graph_models::{iteration_matrix, sample_sbm_retry, variance_profile};
use dcaccel_core::rng::rng_from_seed;
use dcaccel_core::spectral::{eigenvalues, left_perron};
use dcaccel_core::{DensityGrid, Filter, GridSpec, MatrixKind, Plane, SbmConfig};
use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::{CliError, RunConfig};

const PSD_PROBES: usize = 1000;
const PSD_TOL: f64 = 1e-12;
const QUADRATIC_TOL: f64 = 1e-10;
const MAPPING_TOL: f64 = 1e-8;
const NORMALIZATION_TOL: f64 = 1e-12;
const CE_RESIDUAL_TOL: f64 = 1e-8;
const FORMS_TOL: f64 = 1e-12;
const CONSERVATION_TOL: f64 = 1e-10;
const EQUIVALENCE_TOL: f64 = 1e-6;
const CIRCULAR_LAW_TOL: f64 = 0.1;
const SEED: u64 = 0x7a11d;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Check {
    check(name, false, format!("error: {e}"))
}

/// Node-transitive model with 60 nodes used where the suite needs a small instance.
fn small_model(alpha: f64) -> Result<SbmConfig, CliError> {
    Ok(SbmConfig::two_level(6, 10, 0.5, 0.1, alpha)?)
}

fn random_point(rng: &mut impl Rng, radius: f64) -> Complex<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    Complex::from_polar(r, std::f64::consts::TAU * rng.random::<f64>())
}

fn poly(a: &[f64], z: Complex<f64>) -> Complex<f64> {
    a.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn psd_probes(d: usize) -> Check {
    let mut rng = rng_from_seed(SEED);
    let mut worst = f64::INFINITY;
    for _ in 0..PSD_PROBES {
        let q = build_q(random_point(&mut rng, 1.1), d);
        worst = worst.min(SymmetricEigen::new(q).eigenvalues.min());
    }
    check("q_psd", worst >= -PSD_TOL, format!("min eigenvalue {worst:e} over {PSD_PROBES} probes, d={d}"))
}

fn quadratic_identity(d: usize) -> Check {
    let mut rng = rng_from_seed(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..PSD_PROBES {
        let z = random_point(&mut rng, 1.1);
        let a = DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0));
        let quad = (a.transpose() * build_q(z, d) * &a)[(0, 0)];
        worst = worst.max((quad - poly(a.as_slice(), z).norm_sqr()).abs());
    }
    check("quadratic_identity", worst <= QUADRATIC_TOL, format!("max |a'Qa - |p|^2| {worst:e}"))
}

/// Largest distance in a greedy nearest-neighbour matching of two multisets.
fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for &x in a {
        let (k, dist) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, &y)| (k, (x - y).norm()))
            .fold((usize::MAX, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        used[k] = true;
        worst = worst.max(dist);
    }
    worst
}

fn spectral_mapping() -> Result<Check, CliError> {
    let mut rng = rng_from_seed(SEED + 2);
    let n = 8;
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let a: Vec<f64> = vec![0.3, -0.7, 0.4, 1.0];
    let id = DMatrix::<f64>::identity(n, n);
    let pm = a.iter().rev().fold(DMatrix::zeros(n, n), |acc, &c| acc * &m + &id * c);
    let mapped: Vec<Complex<f64>> = eigenvalues(&m, MatrixKind::Xi, None)?.eigenvalues().iter().map(|&z| poly(&a, z)).collect();
    let direct = eigenvalues(&pm, MatrixKind::Xi, None)?;
    let dist = multiset_distance(&mapped, direct.eigenvalues());
    Ok(check("spectral_mapping", dist <= MAPPING_TOL, format!("max matching distance {dist:e} on an {n}x{n} matrix")))
}

/// Small deterministic density on the configured plane, mapped from the
/// scaled-adjacency plane.
fn small_density(model: &SbmConfig, spec: &GridSpec, opts: &CeOptions) -> Result<DensityGrid, CliError> {
    let alpha = model.alpha();
    let xi = spec.with_plane(spec.plane().preimage(alpha));
    let out = integrate_density(&ScalarModel::from_sbm(model)?, &xi, opts)?;
    Ok(map_xi_density_to_w(&out.density, alpha, Some(&spec.plane()))?)
}

fn designed_filters(config: &RunConfig, model: &SbmConfig) -> Result<Vec<Filter>, CliError> {
    let spec = GridSpec::from_plane(config.plane()?);
    let density = small_density(model, &spec, &CeOptions::default())?;
    let region = extract_region(&density, config.region.kappa, config.region.tau)?;
    let points = sample_region(&region, config.design.max_points)?;
    let opts = DesignOptions { tol: config.design.tol, ..DesignOptions::default() };
    let mut degrees = config.design.degrees.clone();
    degrees.sort_unstable();
    degrees.dedup();
    Ok(degrees.into_iter().map(|d| design_filter(&points, d, &opts)).collect::<Result<_, _>>()?)
}

fn normalization(filters: &[Filter]) -> Check {
    let worst = filters.iter().map(|f| (f.eval(Complex::new(1.0, 0.0)).re - 1.0).abs()).fold(0.0, f64::max);
    check("normalization", worst <= NORMALIZATION_TOL, format!("max |p(1) - 1| {worst:e} over {} filters", filters.len()))
}

/// Positivity and residual of scalar solves on a probe set, using the
/// configured solver tolerance.
fn ce_solutions(config: &RunConfig, model: &SbmConfig) -> Result<Check, CliError> {
    let opts = CeOptions { tol: config.grid.tol, max_iter: config.grid.max_iter };
    let scalar = ScalarModel::from_sbm(model)?;
    let row_var = variance_profile(model, true)?.row_sum();
    let (mut min_c, mut worst, mut solves) = (f64::INFINITY, 0.0f64, 0);
    for &u in &[1e-4, 1e-2, 1.0] {
        for &t in &[-0.5, 0.0, 0.5, 1.0] {
            for &s in &[0.0, 0.3] {
                let sol = match scalar.solve(u, t, s, &opts) {
                    Ok(sol) => sol,
                    Err(dcaccel_core::Error::NonConvergence { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                solves += 1;
                min_c = min_c.min(sol.c1.min(sol.c2));
                worst = worst.max(scalar_ce_residual(scalar.spectrum(), row_var, u, t, s, sol.c1, sol.c2));
            }
        }
    }
    let passed = solves > 0 && min_c > 0.0 && worst <= CE_RESIDUAL_TOL;
    Ok(check("ce_solutions", passed, format!("{solves} solves, min(c1, c2) {min_c:e}, max residual {worst:e}")))
}

fn trajectories(model: &SbmConfig, filters: &[Filter]) -> Result<[Check; 2], CliError> {
    let (graph, _) = sample_sbm_retry(model, SEED, 100)?;
    let w = iteration_matrix(&graph, model.alpha())?;
    let projector = left_perron(&w, 1e-15, 1_000_000)?;
    let x0 = default_x0(&projector, SEED);
    let (mut forms, mut drift) = (0.0f64, 0.0f64);
    let cases = std::iter::once(None).chain(filters.iter().map(Some));
    for f in cases {
        let n = 12 * f.map_or(1, |f| f.degree());
        let a = run_consensus(&w, &x0, f, n)?;
        let b = run_consensus_polynomial(&w, &x0, f, n)?;
        for (x, y) in a.states.iter().zip(&b.states) {
            forms = forms.max((x - y).amax());
        }
        let start = projector.average(&a.states[0]);
        for x in &a.states {
            drift = drift.max((projector.average(x) - start).abs());
        }
    }
    Ok([
        check("trajectory_forms", forms <= FORMS_TOL, format!("max window vs polynomial difference {forms:e}")),
        check("conservation", drift <= CONSERVATION_TOL, format!("max drift of the weighted average {drift:e}")),
    ])
}

fn scalar_general(model: &SbmConfig) -> Result<Check, CliError> {
    let scalar = ScalarModel::from_sbm(model)?;
    let general = GeneralModel::from_sbm(model)?;
    let opts = CeOptions { tol: 1e-12, max_iter: 100_000 };
    let mut worst = 0.0f64;
    for &u in &[1e-3, 1e-1, 10.0] {
        for &t in &[-0.3, 0.2, 0.9] {
            for &s in &[0.0, 0.2, 0.5] {
                worst = worst.max((scalar.m(u, t, s, &opts)? - general.m(u, t, s, &opts)?).abs());
            }
        }
    }
    Ok(check("scalar_general", worst <= EQUIVALENCE_TOL, format!("max |m_scalar - m_general| {worst:e} at N={}", model.node_count())))
}

/// Density of the uniform law on the unit disk at cell centres.
pub fn unit_disk_density(plane: &Plane) -> Result<DensityGrid, CliError> {
    let values = (0..plane.len())
        .map(|k| {
            let z = plane.point(k / plane.n_s, k % plane.n_s);
            if z.norm() <= 1.0 { std::f64::consts::FRAC_1_PI } else { 0.0 }
        })
        .collect();
    Ok(DensityGrid::new(*plane, values)?)
}

/// Deterministic density of an i.i.d. profile with variance `1/N`.
pub fn circular_law_density(n: usize, plane: &Plane) -> Result<DensityGrid, CliError> {
    let model = ScalarModel::iid(n, 1.0)?;
    Ok(integrate_density(&model, &GridSpec::from_plane(*plane), &CeOptions::default())?.density)
}

fn circular_law() -> Result<Check, CliError> {
    let plane = Plane::new(-1.5, 1.5, 41, -1.5, 1.5, 41)?;
    let density = circular_law_density(1000, &plane)?;
    let l1 = density.l1_distance(&unit_disk_density(&plane)?, |_| true)?;
    Ok(check("circular_law", l1 <= CIRCULAR_LAW_TOL, format!("L1 to the unit-disk law {l1:.4}")))
}

pub fn run_checks(config: &RunConfig) -> Result<Vec<Check>, CliError> {
    let d = config.design.degrees.iter().copied().max().unwrap_or(1);
    let model = small_model(config.model.alpha)?;
    let mut out = vec![psd_probes(d), quadratic_identity(d)];
    out.push(spectral_mapping().unwrap_or_else(|e| failed("spectral_mapping", e)));
    let filters = designed_filters(config, &model);
    match &filters {
        Ok(f) => out.push(normalization(f)),
        Err(e) => out.push(failed("normalization", e)),
    }
    out.push(ce_solutions(config, &model).unwrap_or_else(|e| failed("ce_solutions", e)));
    let filters = filters.unwrap_or_default();
    match trajectories(&model, &filters) {
        Ok(pair) => out.extend(pair),
        Err(e) => out.extend([failed("trajectory_forms", &e), failed("conservation", &e)]),
    }
    out.push(scalar_general(&model).unwrap_or_else(|e| failed("scalar_general", e)));
    out.push(circular_law().unwrap_or_else(|e| failed("circular_law", e)));
    Ok(out)
}
