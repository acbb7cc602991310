//! Canonical equations for the deterministic equivalent of a non-Hermitian
//! random matrix spectrum, and the density obtained from them.
//!
//! For a random matrix `Xi = B + H` with real symmetric mean `B` and
//! independent centered entries of variance `sigma2[i][j]`, two positive
//! diagonal matrices `C1(u, t, s)` and `C2(u, t, s)` solve
//!
//! ```text
//! C1_kk = u + sum_j sigma2[k][j] [(C2 + (B - z)^* C1^{-1} (B - z))^{-1}]_jj
//! C2_ll = 1 + sum_j sigma2[j][l] [(C1 + (B - z) C2^{-1} (B - z)^*)^{-1}]_jj
//! ```
//!
//! with `z = t + i s`, and the spectral density is
//! `-1/(4 pi) * Laplacian_(t,s) of the integral over u of m(u, t, s)`, where
//! `m = tr[(C1 + (B - z) C2^{-1} (B - z)^*)^{-1}] / N`.
//!
//! When the variance profile has equal row and column sums and the model is
//! node-transitive, `C1 = c1 I` and `C2 = c2 I`, and the traces collapse onto
//! the spectrum of `B`. That scalar form is the production path; the general
//! diagonal form is kept for small `N` as an independent check.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_models::{mean_adjacency, mean_spectrum, variance_profile, MeanSpectrum, SbmConfig};
use crate::grid::{DensityGrid, GridSpec, Plane};

const MAX_GENERAL_DIM: usize = 500;
/// Fraction of invalid cells above which a density run is rejected.
const MAX_INVALID_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeOptions {
    /// Relative fixed-point residual at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CeOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

/// Scalar solution `(c1, c2)` at one `(u, t, s)` node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalSolution {
    pub c1: f64,
    pub c2: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Diagonal solution of the full `2N`-equation system.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSolution {
    pub c1: DVector<f64>,
    pub c2: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Halves the relaxation weight after two consecutive sign flips of the update.
struct Relaxation {
    omega: f64,
    last_sign: f64,
    flips: usize,
}

impl Relaxation {
    fn new() -> Self {
        Self { omega: 1.0, last_sign: 0.0, flips: 0 }
    }

    fn observe(&mut self, step: f64) {
        let sign = step.signum();
        if self.last_sign != 0.0 && sign != 0.0 && sign != self.last_sign {
            self.flips += 1;
            if self.flips >= 2 {
                self.omega = (self.omega * 0.5).max(1.0 / 64.0);
                self.flips = 0;
            }
        } else {
            self.flips = 0;
        }
        self.last_sign = sign;
    }
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("u must be positive and finite, got {u}")))
    }
}

/// Per-distinct-eigenvalue weights `mult / N` and `|lambda - z|^2`.
fn spectral_terms(spectrum: &MeanSpectrum, t: f64, s: f64) -> (Vec<f64>, Vec<f64>) {
    let n = spectrum.node_count() as f64;
    spectrum
        .values()
        .iter()
        .map(|&(lambda, mult)| (mult as f64 / n, (lambda - t).powi(2) + s * s))
        .unzip()
}

/// Solves the scalar canonical equations from the default start `c1 = u + 1, c2 = 2`.
pub fn solve_scalar_ce(
    spectrum: &MeanSpectrum,
    row_var: f64,
    u: f64,
    t: f64,
    s: f64,
    opts: &CeOptions,
) -> Result<CanonicalSolution> {
    solve_scalar_ce_from(spectrum, row_var, u, t, s, (u + 1.0, 2.0), opts)
}

/// Alternating substitution: update `c1` from the first equation, then `c2`
/// from the second using the fresh `c1`.
pub fn solve_scalar_ce_from(
    spectrum: &MeanSpectrum,
    row_var: f64,
    u: f64,
    t: f64,
    s: f64,
    start: (f64, f64),
    opts: &CeOptions,
) -> Result<CanonicalSolution> {
    check_u(u)?;
    if !(row_var >= 0.0) {
        return Err(Error::InvalidInput(format!("row variance must be nonnegative, got {row_var}")));
    }
    let (weights, q) = spectral_terms(spectrum, t, s);
    let (mut c1, mut c2) = start;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::InvalidInput("starting point must be positive".into()));
    }
    let mut relax = Relaxation::new();
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let sum1: f64 = weights.iter().zip(&q).map(|(w, q)| w / (c2 + q / c1)).sum();
        let target1 = u + row_var * sum1;
        let next1 = c1 + relax.omega * (target1 - c1);
        let sum2: f64 = weights.iter().zip(&q).map(|(w, q)| w / (next1 + q / c2)).sum();
        let target2 = 1.0 + row_var * sum2;
        let next2 = c2 + relax.omega * (target2 - c2);
        if !(next1.is_finite() && next2.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite iterate at u={u} t={t} s={s}")));
        }
        residual = ((target1 - c1).abs() / target1).max((target2 - c2).abs() / target2);
        relax.observe(target1 - c1);
        c1 = next1;
        c2 = next2;
        if residual <= opts.tol {
            return Ok(CanonicalSolution { c1, c2, iterations: iteration, residual });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

/// `m(u, t, s)` for a scalar solution.
pub fn compute_m(sol: &CanonicalSolution, spectrum: &MeanSpectrum, t: f64, s: f64) -> f64 {
    let (weights, q) = spectral_terms(spectrum, t, s);
    weights.iter().zip(&q).map(|(w, q)| w / (sol.c1 + q / sol.c2)).sum()
}

/// Residual of the scalar map evaluated at a given point, independent of how
/// the point was produced.
pub fn scalar_ce_residual(spectrum: &MeanSpectrum, row_var: f64, u: f64, t: f64, s: f64, c1: f64, c2: f64) -> f64 {
    let (weights, q) = spectral_terms(spectrum, t, s);
    let f1 = u + row_var * weights.iter().zip(&q).map(|(w, q)| w / (c2 + q / c1)).sum::<f64>();
    let f2 = 1.0 + row_var * weights.iter().zip(&q).map(|(w, q)| w / (c1 + q / c2)).sum::<f64>();
    ((f1 - c1).abs() / f1).max((f2 - c2).abs() / f2)
}

fn check_general_inputs(b: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<()> {
    let n = b.nrows();
    if n == 0 || !b.is_square() || sigma2.shape() != (n, n) {
        return Err(Error::InvalidInput("B and sigma2 must be square of equal size".into()));
    }
    if n > MAX_GENERAL_DIM {
        return Err(Error::InvalidInput(format!("general solver is limited to N <= {MAX_GENERAL_DIM}, got {n}")));
    }
    let scale = b.amax().max(1.0);
    if (b - b.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput("mean matrix must be symmetric".into()));
    }
    if sigma2.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("variances must be nonnegative".into()));
    }
    Ok(())
}

/// Diagonal of `K^{-1}` for the Hermitian positive definite matrix
///
/// `K = diag(outer) + (X + i sign s) diag(inner) (X - i sign s)`
///
/// with `X = B - t I` real symmetric, computed from a Cholesky factor.
fn resolvent_diagonal(x: &DMatrix<f64>, s: f64, outer: &DVector<f64>, inner: &DVector<f64>, sign: f64) -> Result<DVector<f64>> {
    let n = x.nrows();
    let xd = DMatrix::from_fn(n, n, |i, j| x[(i, j)] * inner[j]);
    let real = &xd * x;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let mut re = real[(i, j)];
        if i == j {
            re += outer[i] + s * s * inner[i];
        }
        // (D X - X D)_ij = (d_i - d_j) x_ij
        let im = sign * s * (inner[i] - inner[j]) * x[(i, j)];
        Complex::new(re, im)
    });
    let chol = Cholesky::new(k).ok_or_else(|| Error::NumericalFailure("canonical matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    Ok(DVector::from_fn(n, |j, _| l_inv.column(j).iter().map(|z| z.norm_sqr()).sum()))
}

/// Solves the full diagonal system by alternating substitution.
pub fn solve_general_ce(
    b: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    u: f64,
    t: f64,
    s: f64,
    opts: &CeOptions,
) -> Result<DiagonalSolution> {
    let n = b.nrows();
    solve_general_ce_from(b, sigma2, u, t, s, (DVector::from_element(n, u + 1.0), DVector::from_element(n, 2.0)), opts)
}

pub fn solve_general_ce_from(
    b: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    u: f64,
    t: f64,
    s: f64,
    start: (DVector<f64>, DVector<f64>),
    opts: &CeOptions,
) -> Result<DiagonalSolution> {
    check_u(u)?;
    check_general_inputs(b, sigma2)?;
    let n = b.nrows();
    let x = b - DMatrix::identity(n, n) * t;
    let sigma2_t = sigma2.transpose();
    let (mut c1, mut c2) = start;
    if c1.len() != n || c2.len() != n {
        return Err(Error::InvalidInput("starting vectors have the wrong length".into()));
    }
    let mut relax = Relaxation::new();
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let d2 = resolvent_diagonal(&x, s, &c2, &c1.map(|v| 1.0 / v), 1.0)?;
        let target1 = (sigma2 * &d2).add_scalar(u);
        let next1 = &c1 + (&target1 - &c1) * relax.omega;
        let d1 = resolvent_diagonal(&x, s, &next1, &c2.map(|v| 1.0 / v), -1.0)?;
        let target2 = (&sigma2_t * &d1).add_scalar(1.0);
        let next2 = &c2 + (&target2 - &c2) * relax.omega;
        residual = (0..n)
            .map(|k| ((target1[k] - c1[k]).abs() / target1[k]).max((target2[k] - c2[k]).abs() / target2[k]))
            .fold(0.0, f64::max);
        relax.observe((&target1 - &c1).sum());
        c1 = next1;
        c2 = next2;
        if residual <= opts.tol {
            return Ok(DiagonalSolution { c1, c2, iterations: iteration, residual });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

/// `m(u, t, s)` for a diagonal solution.
pub fn compute_m_general(sol: &DiagonalSolution, b: &DMatrix<f64>, t: f64, s: f64) -> Result<f64> {
    let n = b.nrows();
    let x = b - DMatrix::identity(n, n) * t;
    let d1 = resolvent_diagonal(&x, s, &sol.c1, &sol.c2.map(|v| 1.0 / v), -1.0)?;
    Ok(d1.sum() / n as f64)
}

/// Logarithmically spaced nodes from `beta` to `u_max` inclusive.
pub fn build_u_grid(beta: f64, u_max: f64, n_u: usize) -> Result<Vec<f64>> {
    if !(beta > 0.0 && u_max > beta && n_u >= 2) {
        return Err(Error::InvalidInput(format!("bad u grid ({beta}, {u_max}, {n_u})")));
    }
    let (lo, hi) = (beta.ln(), u_max.ln());
    let step = (hi - lo) / (n_u - 1) as f64;
    Ok((0..n_u)
        .map(|k| match k {
            0 => beta,
            k if k + 1 == n_u => u_max,
            k => (lo + step * k as f64).exp(),
        })
        .collect())
}

/// A model whose canonical equations can be swept over `u` at fixed `(t, s)`.
pub trait CanonicalModel: Sync {
    fn node_count(&self) -> usize;

    /// Spectrum of the (symmetric) mean matrix.
    fn mean_spectrum(&self) -> &MeanSpectrum;

    /// `m` at every node of the ascending grid `us`, solved from the largest
    /// `u` downwards with warm starts. Returns the values and the largest
    /// iteration count used.
    fn m_sweep(&self, t: f64, s: f64, us: &[f64], opts: &CeOptions) -> Result<(Vec<f64>, usize)>;
}

/// Node-transitive model described by its mean spectrum and common row variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarModel {
    spectrum: MeanSpectrum,
    row_var: f64,
}

impl ScalarModel {
    pub fn new(spectrum: MeanSpectrum, row_var: f64) -> Result<Self> {
        if !(row_var >= 0.0) || !row_var.is_finite() {
            return Err(Error::InvalidInput(format!("row variance must be nonnegative, got {row_var}")));
        }
        Ok(Self { spectrum, row_var })
    }

    /// The scaled adjacency `Xi = A / gamma` of a block model.
    pub fn from_sbm(config: &SbmConfig) -> Result<Self> {
        Self::new(mean_spectrum(config, true)?, variance_profile(config, true)?.row_sum())
    }

    /// Zero-mean matrix with i.i.d. entries of variance `sigma2 / n`.
    pub fn iid(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(MeanSpectrum::new(vec![(0.0, n)])?, sigma2)
    }

    pub fn spectrum(&self) -> &MeanSpectrum {
        &self.spectrum
    }

    pub fn row_var(&self) -> f64 {
        self.row_var
    }

    pub fn solve(&self, u: f64, t: f64, s: f64, opts: &CeOptions) -> Result<CanonicalSolution> {
        solve_scalar_ce(&self.spectrum, self.row_var, u, t, s, opts)
    }

    pub fn m(&self, u: f64, t: f64, s: f64, opts: &CeOptions) -> Result<f64> {
        Ok(compute_m(&self.solve(u, t, s, opts)?, &self.spectrum, t, s))
    }
}

impl CanonicalModel for ScalarModel {
    fn node_count(&self) -> usize {
        self.spectrum.node_count()
    }

    fn mean_spectrum(&self) -> &MeanSpectrum {
        &self.spectrum
    }

    fn m_sweep(&self, t: f64, s: f64, us: &[f64], opts: &CeOptions) -> Result<(Vec<f64>, usize)> {
        let mut out = vec![0.0; us.len()];
        let mut worst = 0;
        let mut start: Option<f64> = None;
        for (k, &u) in us.iter().enumerate().rev() {
            // c1 = u c2 holds at every solution, which makes u c2_prev a good start
            let init = start.map_or((u + 1.0, 2.0), |c2| (u * c2, c2));
            let sol = solve_scalar_ce_from(&self.spectrum, self.row_var, u, t, s, init, opts)?;
            worst = worst.max(sol.iterations);
            out[k] = compute_m(&sol, &self.spectrum, t, s);
            start = Some(sol.c2);
        }
        Ok((out, worst))
    }
}

/// General model with an explicit mean matrix and variance profile.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    b: DMatrix<f64>,
    sigma2: DMatrix<f64>,
    spectrum: MeanSpectrum,
}

impl GeneralModel {
    pub fn new(b: DMatrix<f64>, sigma2: DMatrix<f64>) -> Result<Self> {
        check_general_inputs(&b, &sigma2)?;
        let eigs: Vec<f64> = SymmetricEigen::new(b.clone()).eigenvalues.iter().copied().collect();
        let spectrum = MeanSpectrum::from_eigenvalues(&eigs)?;
        Ok(Self { b, sigma2, spectrum })
    }

    /// Dense scaled mean and variance matrices of a block model.
    pub fn from_sbm(config: &SbmConfig) -> Result<Self> {
        let gamma = crate::graph_models::scaling_gamma(config)?;
        let b = mean_adjacency(config).to_dense() / gamma;
        let sigma2 = variance_profile(config, true)?.to_dense();
        Self::new(b, sigma2)
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn variances(&self) -> &DMatrix<f64> {
        &self.sigma2
    }

    pub fn solve(&self, u: f64, t: f64, s: f64, opts: &CeOptions) -> Result<DiagonalSolution> {
        solve_general_ce(&self.b, &self.sigma2, u, t, s, opts)
    }

    pub fn m(&self, u: f64, t: f64, s: f64, opts: &CeOptions) -> Result<f64> {
        compute_m_general(&self.solve(u, t, s, opts)?, &self.b, t, s)
    }
}

impl CanonicalModel for GeneralModel {
    fn node_count(&self) -> usize {
        self.b.nrows()
    }

    fn mean_spectrum(&self) -> &MeanSpectrum {
        &self.spectrum
    }

    fn m_sweep(&self, t: f64, s: f64, us: &[f64], opts: &CeOptions) -> Result<(Vec<f64>, usize)> {
        let n = self.b.nrows();
        let mut out = vec![0.0; us.len()];
        let mut worst = 0;
        let mut start: Option<DVector<f64>> = None;
        for (k, &u) in us.iter().enumerate().rev() {
            let init = match &start {
                Some(c2) => (c2 * u, c2.clone()),
                None => (DVector::from_element(n, u + 1.0), DVector::from_element(n, 2.0)),
            };
            let sol = solve_general_ce_from(&self.b, &self.sigma2, u, t, s, init, opts)?;
            worst = worst.max(sol.iterations);
            out[k] = compute_m_general(&sol, &self.b, t, s)?;
            start = Some(sol.c2);
        }
        Ok((out, worst))
    }
}

/// Bookkeeping for one density run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub grid: GridSpec,
    pub ce: CeOptions,
    /// Cells whose stencil touched a node where the fixed point failed.
    pub invalid_cells: Vec<(usize, usize)>,
    /// Mass removed by clipping negative values.
    pub clipped_mass: f64,
    /// Largest density contribution of the analytic `(u_max, inf)` tail term.
    pub tail_correction_max: f64,
    /// Estimated size of what the tail term leaves out.
    pub tail_bound: f64,
    pub mass: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOutput {
    pub density: DensityGrid,
    pub report: DensityReport,
}

struct NodeValue {
    potential: f64,
    tail: f64,
    remainder: f64,
    iterations: usize,
}

/// Large-`u` pieces at one node: the integral over `(u_max, inf)` of
/// `m_inf(u) - 1/u` with `m_inf(u) = mean_k 1/(u + |lambda_k - z|^2)`, and
/// `u_max (m(u_max) - m_inf(u_max))`, whose Laplacian bounds what the tail
/// term misses.
fn tail_terms(spectrum: &MeanSpectrum, t: f64, s: f64, u_max: f64, m_at_max: f64) -> (f64, f64) {
    let (weights, q) = spectral_terms(spectrum, t, s);
    let tail = -weights.iter().zip(&q).map(|(w, q)| w * (q / u_max).ln_1p()).sum::<f64>();
    let asymptote: f64 = weights.iter().zip(&q).map(|(w, q)| w / (u_max + q)).sum();
    (tail, u_max * (m_at_max - asymptote))
}

/// Compact nine-point Laplacian at interior node `(i, j)` of a padded grid.
///
/// The fourth-order correction term cancels the truncation error on harmonic
/// functions, which is what the potential is away from the support; the
/// plain five-point stencil leaves a floor there of order `h^2 / r^4`.
fn laplacian9(f: &[f64], cols: usize, i: usize, j: usize, dt: f64, ds: f64) -> f64 {
    let at = |a: usize, b: usize| f[a * cols + b];
    let dtt = |b: usize| (at(i + 1, b) - 2.0 * at(i, b) + at(i - 1, b)) / (dt * dt);
    let dss = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (ds * ds);
    let cross = (dtt(j + 1) - 2.0 * dtt(j) + dtt(j - 1)) / (ds * ds);
    dtt(j) + dss + (dt * dt + ds * ds) / 12.0 * cross
}

/// Deterministic density over `grid`, in the coordinates of the model.
pub fn integrate_density<M: CanonicalModel>(model: &M, grid: &GridSpec, opts: &CeOptions) -> Result<DensityOutput> {
    grid.validate()?;
    let plane = grid.plane();
    let us = build_u_grid(grid.beta, grid.u_max, grid.n_u)?;
    let log_u: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    let (dt, ds) = (plane.dt(), plane.ds());
    let (rows, cols) = (plane.n_t + 2, plane.n_s + 2);

    // One padded ring so every cell has a full stencil.
    let nodes: Vec<Option<NodeValue>> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let t = plane.t_min + (idx / cols) as f64 * dt - dt;
            let s = plane.s_min + (idx % cols) as f64 * ds - ds;
            let (m, iterations) = model.m_sweep(t, s, &us, opts).ok()?;
            let potential = (1..us.len())
                .map(|k| 0.5 * (m[k] * us[k] + m[k - 1] * us[k - 1]) * (log_u[k] - log_u[k - 1]))
                .sum();
            let (tail, remainder) = tail_terms(model.mean_spectrum(), t, s, grid.u_max, m[us.len() - 1]);
            Some(NodeValue { potential, tail, remainder, iterations })
        })
        .collect();

    let field = |get: fn(&NodeValue) -> f64| -> Vec<f64> { nodes.iter().map(|n| n.as_ref().map_or(0.0, get)).collect() };
    let total = field(|n| n.potential + n.tail);
    let tail = field(|n| n.tail);
    let remainder = field(|n| n.remainder);
    let scale = -1.0 / (4.0 * std::f64::consts::PI);

    let mut values = vec![0.0; plane.len()];
    let mut invalid_cells = Vec::new();
    let mut tail_correction_max: f64 = 0.0;
    let mut tail_bound: f64 = 0.0;
    for i in 0..plane.n_t {
        for j in 0..plane.n_s {
            let (pi, pj) = (i + 1, j + 1);
            let stencil_ok = (pi - 1..=pi + 1).all(|a| (pj - 1..=pj + 1).all(|b| nodes[a * cols + b].is_some()));
            if !stencil_ok {
                invalid_cells.push((i, j));
                continue;
            }
            values[plane.index(i, j)] = scale * laplacian9(&total, cols, pi, pj, dt, ds);
            tail_correction_max = tail_correction_max.max((scale * laplacian9(&tail, cols, pi, pj, dt, ds)).abs());
            tail_bound = tail_bound.max((scale * laplacian9(&remainder, cols, pi, pj, dt, ds)).abs());
        }
    }
    if invalid_cells.len() as f64 > MAX_INVALID_FRACTION * plane.len() as f64 {
        return Err(Error::DensityFailure { invalid: invalid_cells.len(), total: plane.len() });
    }

    let area = plane.cell_area();
    let mut clipped_mass = 0.0;
    for v in &mut values {
        if *v < 0.0 {
            clipped_mass -= *v * area;
            *v = 0.0;
        }
    }
    let density = DensityGrid::new(plane, values)?;
    let report = DensityReport {
        grid: *grid,
        ce: *opts,
        invalid_cells,
        clipped_mass,
        tail_correction_max,
        tail_bound,
        mass: density.mass(),
        max_iterations: nodes.iter().flatten().map(|n| n.iterations).max().unwrap_or(0),
    };
    Ok(DensityOutput { density, report })
}

/// Bilinear interpolation at `(t, s)`; `None` outside the node range.
fn bilinear(grid: &DensityGrid, t: f64, s: f64) -> Option<f64> {
    let p = grid.plane();
    let locate = |x: f64, min: f64, h: f64, n: usize| -> Option<(usize, f64)> {
        let f = (x - min) / h;
        let snapped = if (f - f.round()).abs() <= 1e-9 { f.round() } else { f };
        if snapped < 0.0 || snapped > (n - 1) as f64 {
            return None;
        }
        let k = (snapped.floor() as usize).min(n - 2);
        Some((k, snapped - k as f64))
    };
    let (i, ft) = locate(t, p.t_min, p.dt(), p.n_t)?;
    let (j, fs) = locate(s, p.s_min, p.ds(), p.n_s)?;
    let v00 = grid.get(i, j);
    let v10 = grid.get(i + 1, j);
    let v01 = grid.get(i, j + 1);
    let v11 = grid.get(i + 1, j + 1);
    Some((1.0 - ft) * ((1.0 - fs) * v00 + fs * v01) + ft * ((1.0 - fs) * v10 + fs * v11))
}

/// Density of `W = (1 - alpha) I + alpha Xi` from the density of `Xi`:
/// `f_W(x, y) = f_Xi((x - 1)/alpha + 1, y/alpha) / alpha^2`.
///
/// Without a `target`, the result lives on the image of the source plane,
/// where every target node maps exactly onto a source node.
pub fn map_xi_density_to_w(density: &DensityGrid, alpha: f64, target: Option<&Plane>) -> Result<DensityGrid> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let plane = match target {
        Some(p) => {
            p.validate()?;
            *p
        }
        None => density.plane().image(alpha),
    };
    let jacobian = 1.0 / (alpha * alpha);
    let mut values = Vec::with_capacity(plane.len());
    for i in 0..plane.n_t {
        for j in 0..plane.n_s {
            let z = plane.point(i, j);
            let (t, s) = ((z.re - 1.0) / alpha + 1.0, z.im / alpha);
            let v = bilinear(density, t, s)
                .ok_or_else(|| Error::Coverage(format!("({}, {}) maps to ({t}, {s}) outside the source grid", z.re, z.im)))?;
            values.push(v * jacobian);
        }
    }
    DensityGrid::new(plane, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_model(s: usize) -> (SbmConfig, ScalarModel) {
        let cfg = SbmConfig::two_level(6, s, 0.05, 0.01, 1.0).unwrap();
        let model = ScalarModel::from_sbm(&cfg).unwrap();
        (cfg, model)
    }

    fn tight() -> CeOptions {
        CeOptions { tol: 1e-13, max_iter: 100_000 }
    }

    /// Bisection on `c1 - u - c1/(c1 + 1)`, the zero-mean unit-variance system
    /// at the origin after eliminating `c2 = 1 + 1/c1`.
    fn origin_oracle(u: f64) -> (f64, f64) {
        let g = |c1: f64| c1 - u - c1 / (c1 + 1.0);
        let (mut lo, mut hi) = (u, u + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c1 = 0.5 * (lo + hi);
        (c1, 1.0 + 1.0 / c1)
    }

    #[test]
    fn zero_variance_is_immediate() {
        let spectrum = MeanSpectrum::new(vec![(0.3, 4), (-0.1, 2)]).unwrap();
        let sol = solve_scalar_ce(&spectrum, 0.0, 0.7, 0.2, 0.1, &CeOptions::default()).unwrap();
        assert_eq!(sol.c1, 0.7);
        assert_eq!(sol.c2, 1.0);
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn origin_system_matches_bisection() {
        let spectrum = MeanSpectrum::new(vec![(0.0, 50)]).unwrap();
        for u in [1e-4, 0.01, 1.0, 30.0] {
            let sol = solve_scalar_ce(&spectrum, 1.0, u, 0.0, 0.0, &tight()).unwrap();
            let (c1, c2) = origin_oracle(u);
            assert!((sol.c1 - c1).abs() <= 1e-9 * c1, "u={u}: {} vs {c1}", sol.c1);
            assert!((sol.c2 - c2).abs() <= 1e-9 * c2);
        }
    }

    #[test]
    fn large_u_asymptotics() {
        let (_, model) = reference_model(100);
        let u = 1e8;
        let sol = model.solve(u, 0.1, 0.2, &CeOptions::default()).unwrap();
        assert!((sol.c1 - u).abs() <= 2.0 * model.row_var());
        assert!((sol.c2 - 1.0).abs() <= 1e-6);
        let m = compute_m(&sol, model.spectrum(), 0.1, 0.2);
        assert!((0.5..=2.0).contains(&(m * u)));
    }

    #[test]
    fn deterministic_zero_matrix_m() {
        let model = ScalarModel::new(MeanSpectrum::new(vec![(0.0, 10)]).unwrap(), 0.0).unwrap();
        let m = model.m(0.3, 0.4, -0.5, &CeOptions::default()).unwrap();
        assert!((m - 1.0 / (0.3 + 0.16 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn non_convergence_is_reported() {
        let (_, model) = reference_model(50);
        let opts = CeOptions { tol: 1e-14, max_iter: 3 };
        assert!(matches!(model.solve(1e-6, 0.0, 0.0, &opts), Err(Error::NonConvergence { iterations: 3, .. })));
    }

    #[test]
    fn solutions_are_positive_with_small_residual() {
        let (_, model) = reference_model(50);
        let opts = CeOptions::default();
        for &u in &[1e-6, 1e-3, 1.0, 1e3] {
            for &(t, s) in &[(0.0, 0.0), (0.39, 0.0), (1.0, 0.0), (0.5, 0.5), (-0.6, 0.3)] {
                let sol = model.solve(u, t, s, &opts).unwrap();
                assert!(sol.c1 > 0.0 && sol.c2 > 0.0);
                let r = scalar_ce_residual(model.spectrum(), model.row_var(), u, t, s, sol.c1, sol.c2);
                assert!(r <= 1e-7, "u={u} t={t} s={s} residual {r}");
            }
        }
    }

    #[test]
    fn solve_is_bitwise_repeatable() {
        let (_, model) = reference_model(100);
        let a = model.solve(1e-4, 0.2, 0.1, &CeOptions::default()).unwrap();
        let b = model.solve(1e-4, 0.2, 0.1, &CeOptions::default()).unwrap();
        assert_eq!(a.c1.to_bits(), b.c1.to_bits());
        assert_eq!(a.c2.to_bits(), b.c2.to_bits());
    }

    #[test]
    fn dependence_on_u_along_a_ray() {
        // c1 - u grows towards the row variance while c2 - 1 = row_var * m decays.
        let (_, model) = reference_model(100);
        let us = build_u_grid(1e-4, 1e3, 20).unwrap();
        for &(t, s) in &[(0.0, 0.0), (0.2, 0.1), (0.7, 0.4)] {
            let sols: Vec<_> = us.iter().map(|&u| model.solve(u, t, s, &tight()).unwrap()).collect();
            for w in sols.windows(2).zip(us.windows(2)) {
                let ([a, b], [ua, ub]) = (w.0, w.1) else { unreachable!() };
                assert!(b.c1 - ub > a.c1 - ua, "c1 - u at t={t} s={s}");
                assert!(b.c2 < a.c2, "c2 at t={t} s={s}");
            }
        }
    }

    #[test]
    fn general_zero_variance_is_immediate() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let sol = solve_general_ce(&b, &DMatrix::zeros(2, 2), 0.4, 0.1, 0.2, &CeOptions::default()).unwrap();
        assert!(sol.c1.iter().all(|&v| v == 0.4));
        assert!(sol.c2.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn general_rejects_non_symmetric_mean() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.1, 0.0]);
        assert!(matches!(
            solve_general_ce(&b, &DMatrix::zeros(2, 2), 1.0, 0.0, 0.0, &CeOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn general_iid_profile_is_constant_and_matches_scalar() {
        let n = 40;
        let b = DMatrix::zeros(n, n);
        let sigma2 = DMatrix::from_element(n, n, 1.0 / n as f64);
        let sol = solve_general_ce(&b, &sigma2, 1.0, 0.0, 0.0, &tight()).unwrap();
        let scalar = solve_scalar_ce(&MeanSpectrum::new(vec![(0.0, n)]).unwrap(), 1.0, 1.0, 0.0, 0.0, &tight()).unwrap();
        for k in 0..n {
            assert!((sol.c1[k] - scalar.c1).abs() <= 1e-10);
            assert!((sol.c2[k] - scalar.c2).abs() <= 1e-10);
        }
    }

    #[test]
    fn general_matches_scalar_on_transitive_block_model() {
        let (cfg, scalar) = reference_model(10);
        let general = GeneralModel::from_sbm(&cfg).unwrap();
        for &u in &[0.05, 1.0] {
            for &(t, s) in &[(0.0, 0.1), (0.4, 0.0)] {
                let g = general.solve(u, t, s, &tight()).unwrap();
                let c = scalar.solve(u, t, s, &tight()).unwrap();
                assert!(g.c1.iter().all(|v| (v - c.c1).abs() <= 1e-8));
                assert!(g.c2.iter().all(|v| (v - c.c2).abs() <= 1e-8));
                let mg = compute_m_general(&g, general.mean(), t, s).unwrap();
                let ms = compute_m(&c, scalar.spectrum(), t, s);
                assert!((mg - ms).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn u_grid_examples() {
        assert_eq!(build_u_grid(1e-6, 1e2, 2).unwrap(), vec![1e-6, 1e2]);
        let g = build_u_grid(1e-6, 1e2, 9).unwrap();
        for (k, v) in g.iter().enumerate() {
            let expected = 10f64.powi(k as i32 - 6);
            assert!((v - expected).abs() <= 1e-12 * expected);
        }
        let g = build_u_grid(1e-6, 1e3, 96).unwrap();
        let r0 = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r0).abs() <= 1e-12));
        assert!(build_u_grid(0.0, 1.0, 4).is_err());
    }

    fn small_grid(lo: f64, hi: f64, n: usize) -> GridSpec {
        GridSpec::from_plane(Plane::new(lo, hi, n, lo, hi, n).unwrap())
    }

    #[test]
    fn zero_matrix_density_concentrates_at_origin() {
        let model = ScalarModel::new(MeanSpectrum::new(vec![(0.0, 100)]).unwrap(), 0.0).unwrap();
        let grid = small_grid(-1.0, 1.0, 21);
        let out = integrate_density(&model, &grid, &CeOptions::default()).unwrap();
        let radius = 2.0 / (grid.n_t as f64).sqrt();
        let near = out.density.mass_where(|z| z.norm() <= radius);
        let far = out.density.mass_where(|z| z.norm() > radius);
        assert!(near >= 0.9, "near-origin mass {near}");
        assert!(far <= 0.01, "far mass {far}");
    }

    #[test]
    fn circular_law_is_recovered() {
        let model = ScalarModel::iid(1000, 1.0).unwrap();
        let grid = small_grid(-1.5, 1.5, 41);
        let out = integrate_density(&model, &grid, &CeOptions::default()).unwrap();
        let d = &out.density;
        let ideal = DensityGrid::new(
            *d.plane(),
            (0..d.plane().len())
                .map(|k| {
                    let z = d.plane().point(k / d.plane().n_s, k % d.plane().n_s);
                    if z.norm() <= 1.0 { std::f64::consts::FRAC_1_PI } else { 0.0 }
                })
                .collect(),
        )
        .unwrap();
        let l1 = d.l1_distance(&ideal, |_| true).unwrap();
        assert!(l1 <= 0.1, "L1 to the uniform disk {l1}");
        assert!((out.report.mass - 1.0).abs() < 0.02);
        assert!(out.report.clipped_mass < 1e-3);
        assert!(out.report.invalid_cells.is_empty());
    }

    #[test]
    fn density_is_thread_count_independent() {
        let (_, model) = reference_model(20);
        let grid = small_grid(-0.5, 0.5, 9);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| integrate_density(&model, &grid, &CeOptions::default()).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert!(a.density.values().iter().zip(b.density.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mapping_identity_and_mass() {
        let (_, model) = reference_model(20);
        let out = integrate_density(&model, &small_grid(-0.8, 1.2, 21), &CeOptions::default()).unwrap();
        let same = map_xi_density_to_w(&out.density, 1.0, None).unwrap();
        assert!(same.values().iter().zip(out.density.values()).all(|(a, b)| (a - b).abs() <= 1e-12));
        let half = map_xi_density_to_w(&out.density, 0.5, None).unwrap();
        assert!((half.mass() - out.density.mass()).abs() <= 1e-3);
    }

    #[test]
    fn mapping_moves_origin_mass_to_one_minus_alpha() {
        let model = ScalarModel::new(MeanSpectrum::new(vec![(0.0, 10)]).unwrap(), 0.0).unwrap();
        let grid = small_grid(-1.0, 1.0, 21);
        let xi = integrate_density(&model, &grid, &CeOptions::default()).unwrap().density;
        let w = map_xi_density_to_w(&xi, 0.5, None).unwrap();
        let (mut mass, mut centroid) = (0.0, Complex::new(0.0, 0.0));
        for i in 0..w.plane().n_t {
            for j in 0..w.plane().n_s {
                mass += w.get(i, j);
                centroid += w.plane().point(i, j) * w.get(i, j);
            }
        }
        centroid /= mass;
        assert!((centroid - Complex::new(0.5, 0.0)).norm() <= w.plane().dt());
    }

    #[test]
    fn mapping_detects_missing_coverage() {
        let plane = Plane::new(-0.5, 1.0, 7, -0.5, 0.5, 5).unwrap();
        let grid = DensityGrid::zeros(plane);
        let target = Plane::new(-0.5, 1.0, 7, -0.5, 0.5, 5).unwrap();
        assert!(matches!(map_xi_density_to_w(&grid, 0.5, Some(&target)), Err(Error::Coverage(_))));
        assert!(map_xi_density_to_w(&grid, 1.0, Some(&target)).is_ok());
    }
}
