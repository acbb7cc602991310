//! Spectra of realized matrices: dense eigenvalues, the consensus projector,
//! convergence factors and Monte-Carlo spectral histograms.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Filter;
use crate::graph_models::{iteration_matrix, sample_sbm_retry, IterationMatrix, SbmConfig};
use crate::grid::{DensityGrid, Plane};
use crate::rng::derive_seed;

const MAX_DENSE_DIM: usize = 5000;
/// Distance from 1 within which an eigenvalue counts as the consensus eigenvalue.
pub const CONSENSUS_TOL: f64 = 1e-8;
/// Trials flagged as failed above this fraction abort a Monte-Carlo run.
const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    /// Scaled adjacency `A / gamma`.
    Xi,
    /// Consensus iteration matrix.
    W,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSample {
    eigenvalues: Vec<Complex<f64>>,
    seed: Option<u64>,
    kind: MatrixKind,
}

impl SpectrumSample {
    pub fn new(mut eigenvalues: Vec<Complex<f64>>, seed: Option<u64>, kind: MatrixKind) -> Self {
        eigenvalues.sort_by(|a, b| {
            a.norm()
                .total_cmp(&b.norm())
                .then(a.re.total_cmp(&b.re))
                .then(a.im.total_cmp(&b.im))
        });
        Self { eigenvalues, seed, kind }
    }

    /// Eigenvalues in ascending modulus.
    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.eigenvalues
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Number of eigenvalues within [`CONSENSUS_TOL`] of 1.
    pub fn consensus_count(&self) -> usize {
        self.eigenvalues.iter().filter(|z| (*z - 1.0).norm() <= CONSENSUS_TOL).count()
    }

    /// Index of the eigenvalue closest to 1.
    pub fn consensus_index(&self) -> Option<usize> {
        (0..self.eigenvalues.len()).min_by(|&a, &b| {
            (self.eigenvalues[a] - 1.0).norm().total_cmp(&(self.eigenvalues[b] - 1.0).norm())
        })
    }

    /// The spectrum with the eigenvalue closest to 1 removed.
    pub fn without_consensus(&self) -> Vec<Complex<f64>> {
        let skip = self.consensus_index();
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|&(k, _)| Some(k) != skip)
            .map(|(_, z)| *z)
            .collect()
    }

    /// `rho(W - J)`: the largest modulus once the consensus eigenvalue is removed.
    pub fn subdominant_modulus(&self) -> f64 {
        self.without_consensus().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// A simple consensus eigenvalue and every other eigenvalue strictly
    /// inside the unit circle.
    pub fn is_connected(&self) -> bool {
        self.consensus_count() == 1 && self.subdominant_modulus() < 1.0 - 1e-9
    }
}

/// All eigenvalues of a dense real matrix, via a real Schur decomposition.
pub fn eigenvalues(matrix: &DMatrix<f64>, kind: MatrixKind, seed: Option<u64>) -> Result<SpectrumSample> {
    let n = matrix.nrows();
    if !matrix.is_square() || n == 0 {
        return Err(Error::InvalidInput("matrix must be square and nonempty".into()));
    }
    if n > MAX_DENSE_DIM {
        return Err(Error::InvalidInput(format!("dense eigensolver is limited to N <= {MAX_DENSE_DIM}, got {n}")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(matrix.clone(), f64::EPSILON, 1000.max(30 * n))
        .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?;
    let eigs: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eigs.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
    }
    Ok(SpectrumSample::new(eigs, seed, kind))
}

/// `J = 1 l^T` with `l^T W = l^T` and `l^T 1 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusProjector {
    ell: DVector<f64>,
}

impl ConsensusProjector {
    pub fn ell(&self) -> &DVector<f64> {
        &self.ell
    }

    /// The weighted average `l^T x`.
    pub fn average(&self, x: &DVector<f64>) -> f64 {
        self.ell.dot(x)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DVector::from_element(self.ell.len(), 1.0) * self.ell.transpose()
    }
}

fn perron_residual(wt: &DMatrix<f64>, ell: &DVector<f64>) -> f64 {
    (wt * ell - ell).amax()
}

/// Power iteration on `W^T`, renormalized to unit sum. Returns the vector and
/// whether it reached `tol` before `max_iter` or before stalling.
fn power_iteration(wt: &DMatrix<f64>, start: DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, bool) {
    let mut ell = &start / start.sum();
    let mut previous = f64::INFINITY;
    let mut slow = 0;
    for _ in 0..max_iter {
        let next = wt * &ell;
        let next = &next / next.sum();
        let residual = perron_residual(wt, &next);
        ell = next;
        if residual <= tol {
            return (ell, true);
        }
        // A contraction ratio this close to 1 means a vanishing spectral gap.
        slow = if residual > (1.0 - 1e-3) * previous { slow + 1 } else { 0 };
        if slow >= 50 {
            return (ell, false);
        }
        previous = residual;
    }
    (ell, false)
}

/// Direct solve of `(W^T - I) l = 0, 1^T l = 1` by replacing one equation.
fn direct_perron(wt: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = wt.nrows();
    let mut a = wt - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu().solve(&rhs)
}

/// Left Perron vector of `W`.
///
/// Power iteration runs from two different starts; disagreement means the
/// unit eigenvalue is not simple. When the iteration stalls the vector is
/// obtained from a direct linear solve instead.
pub fn left_perron(w: &IterationMatrix, tol: f64, max_iter: usize) -> Result<ConsensusProjector> {
    let wt = w.matrix().transpose();
    let n = wt.nrows();
    let uniform = DVector::from_element(n, 1.0);
    let skewed = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64);
    let (a, ok_a) = power_iteration(&wt, uniform, tol, max_iter);
    let ell = if ok_a {
        let (b, ok_b) = power_iteration(&wt, skewed, tol, max_iter);
        if ok_b && (&a - &b).amax() > 1e3 * tol.max(1e-12) {
            return Err(Error::PerronFailure("eigenvalue 1 is not simple".into()));
        }
        a
    } else {
        direct_perron(&wt).ok_or_else(|| Error::PerronFailure("eigenvalue 1 is not simple".into()))?
    };
    let residual = perron_residual(&wt, &ell);
    if !(residual <= tol) {
        return Err(Error::PerronFailure(format!("residual {residual:e} above {tol:e}")));
    }
    if ell.iter().any(|&v| v < -tol) {
        return Err(Error::PerronFailure("vector has negative entries".into()));
    }
    Ok(ConsensusProjector { ell })
}

/// `(1/d) ln max |p(lambda)|` over the spectrum without its consensus eigenvalue.
/// Without a filter this is `ln rho(W - J)`.
pub fn convergence_factor(sample: &SpectrumSample, filter: Option<&Filter>) -> f64 {
    let rest = sample.without_consensus();
    match filter {
        None => rest.iter().map(|z| z.norm()).fold(0.0, f64::max).ln(),
        Some(f) => rest.iter().map(|&z| f.eval(z).norm()).fold(0.0, f64::max).ln() / f.degree() as f64,
    }
}

/// Histogram of the spectrum normalized by `N * cell_area`, plus the count of
/// eigenvalues outside the plane.
pub fn empirical_density(sample: &SpectrumSample, plane: &Plane) -> Result<(DensityGrid, usize)> {
    plane.validate()?;
    let mut counts = vec![0usize; plane.len()];
    let mut overflow = 0;
    for &z in sample.eigenvalues() {
        match plane.cell_of(z) {
            Some((i, j)) => counts[plane.index(i, j)] += 1,
            None => overflow += 1,
        }
    }
    let scale = 1.0 / (sample.len() as f64 * plane.cell_area());
    Ok((DensityGrid::new(*plane, counts.into_iter().map(|c| c as f64 * scale).collect())?, overflow))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    /// Leave realizations without a simple consensus eigenvalue out of the average.
    pub exclude_disconnected: bool,
    /// Resampling budget for realizations with an isolated node.
    pub max_sample_attempts: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { exclude_disconnected: false, max_sample_attempts: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Seed of the realization actually used.
    pub seed: u64,
    pub attempts: usize,
    pub connected: bool,
    pub subdominant: f64,
    pub overflow: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub density: DensityGrid,
    pub records: Vec<TrialRecord>,
    /// Spectra of the trials that entered the average, by trial index.
    pub spectra: Vec<SpectrumSample>,
}

impl McResult {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn disconnected(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_none() && !r.connected).count()
    }

    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trials {}", self.records.len())?;
        writeln!(w, "averaged {}", self.spectra.len())?;
        writeln!(w, "failed {}", self.failed())?;
        writeln!(w, "disconnected {}", self.disconnected())?;
        writeln!(w, "trial,seed,attempts,connected,rho,overflow,failure")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.trial,
                r.seed,
                r.attempts,
                r.connected,
                r.subdominant,
                r.overflow,
                r.failure.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

/// Spectrum of the iteration matrix of one realization, with retry over
/// isolated nodes.
pub fn sample_w_spectrum(config: &SbmConfig, seed: u64, max_attempts: usize) -> Result<(SpectrumSample, usize)> {
    let (graph, info) = sample_sbm_retry(config, seed, max_attempts)?;
    let w = iteration_matrix(&graph, config.alpha())?;
    Ok((eigenvalues(w.matrix(), MatrixKind::W, Some(info.seed))?, info.attempts))
}

/// Trial `k` uses the realization seeded by `derive_seed(base_seed, k)`.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    derive_seed(base_seed, trial as u64)
}

/// Average of per-trial empirical densities of `W`.
pub fn expected_density_mc(config: &SbmConfig, trials: usize, plane: &Plane, base_seed: u64, opts: &McOptions) -> Result<McResult> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    plane.validate()?;
    let outcomes: Vec<(TrialRecord, Option<(SpectrumSample, DensityGrid)>)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(base_seed, trial);
            let mut record =
                TrialRecord { trial, seed, attempts: 0, connected: false, subdominant: f64::NAN, overflow: 0, failure: None };
            match sample_w_spectrum(config, seed, opts.max_sample_attempts) {
                Ok((spectrum, attempts)) => {
                    record.seed = spectrum.seed().unwrap_or(seed);
                    record.attempts = attempts;
                    record.connected = spectrum.is_connected();
                    record.subdominant = spectrum.subdominant_modulus();
                    match empirical_density(&spectrum, plane) {
                        Ok((density, overflow)) => {
                            record.overflow = overflow;
                            (record, Some((spectrum, density)))
                        }
                        Err(e) => {
                            record.failure = Some(e.to_string());
                            (record, None)
                        }
                    }
                }
                Err(e) => {
                    record.failure = Some(e.to_string());
                    (record, None)
                }
            }
        })
        .collect();

    let failed = outcomes.iter().filter(|(r, _)| r.failure.is_some()).count();
    if failed as f64 > MAX_FAILED_FRACTION * trials as f64 {
        return Err(Error::McFailure { failed, trials });
    }
    let mut sum = vec![0.0; plane.len()];
    let mut records = Vec::with_capacity(trials);
    let mut spectra = Vec::new();
    for (record, payload) in outcomes {
        if let Some((spectrum, density)) = payload {
            if record.connected || !opts.exclude_disconnected {
                for (acc, v) in sum.iter_mut().zip(density.values()) {
                    *acc += v;
                }
                spectra.push(spectrum);
            }
        }
        records.push(record);
    }
    if spectra.is_empty() {
        return Err(Error::McFailure { failed: trials, trials });
    }
    let count = spectra.len() as f64;
    let density = DensityGrid::new(*plane, sum.into_iter().map(|v| v / count).collect())?;
    Ok(McResult { density, records, spectra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_models::DirectedGraph;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5)
    }

    /// Greedy nearest matching; adequate when the sets are well separated.
    fn max_matching_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        let mut used = vec![false; b.len()];
        a.iter()
            .map(|x| {
                let k = (0..b.len())
                    .filter(|&k| !used[k])
                    .min_by(|&p, &q| (b[p] - x).norm().total_cmp(&(b[q] - x).norm()))
                    .unwrap();
                used[k] = true;
                (b[k] - x).norm()
            })
            .fold(0.0, f64::max)
    }

    fn ring_w(n: usize) -> IterationMatrix {
        // Complete graph: W = (J - I)/(n-1), symmetric and doubly stochastic.
        let g = DirectedGraph::from_edges(n, (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))).unwrap();
        iteration_matrix(&g, 1.0).unwrap()
    }

    #[test]
    fn trivial_spectra() {
        let id = eigenvalues(&DMatrix::identity(5, 5), MatrixKind::W, None).unwrap();
        assert!(id.eigenvalues().iter().all(|z| (z - 1.0).norm() < 1e-14));
        let rot = eigenvalues(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), MatrixKind::W, None).unwrap();
        let mut ims: Vec<f64> = rot.eigenvalues().iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + 1.0).abs() < 1e-14 && (ims[1] - 1.0).abs() < 1e-14);
        assert!(rot.eigenvalues().iter().all(|z| z.re.abs() < 1e-14));
    }

    #[test]
    fn real_spectra_pair_up() {
        let s = eigenvalues(&random_matrix(30, 4), MatrixKind::Xi, None).unwrap();
        let conj: Vec<_> = s.eigenvalues().iter().map(|z| z.conj()).collect();
        assert!(max_matching_distance(s.eigenvalues(), &conj) <= 1e-9);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(eigenvalues(&m, MatrixKind::W, None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn spectral_mapping_on_small_matrices() {
        for seed in 0..5 {
            let w = random_matrix(8, seed);
            let pw = &w * &w + &w;
            let direct = eigenvalues(&pw, MatrixKind::W, None).unwrap();
            let mapped: Vec<_> = eigenvalues(&w, MatrixKind::W, None).unwrap().eigenvalues().iter().map(|z| z * z + z).collect();
            assert!(max_matching_distance(direct.eigenvalues(), &mapped) <= 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn doubly_stochastic_has_uniform_perron_vector() {
        let w = ring_w(6);
        let p = left_perron(&w, 1e-12, 10_000).unwrap();
        assert!(p.ell().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn identity_has_no_unique_perron_vector() {
        let g = DirectedGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = iteration_matrix(&g, 0.0).unwrap();
        assert!(matches!(left_perron(&w, 1e-12, 1000), Err(Error::PerronFailure(_))));
    }

    #[test]
    fn periodic_chain_falls_back_to_direct_solve() {
        // A directed cycle has eigenvalues on the unit circle, so power iteration never settles.
        let g = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let w = iteration_matrix(&g, 1.0).unwrap();
        let p = left_perron(&w, 1e-12, 10_000).unwrap();
        assert!(p.ell().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    fn paper_sample(seed: u64) -> (IterationMatrix, SpectrumSample) {
        let cfg = SbmConfig::two_level(6, 50, 0.05, 0.01, 1.0).unwrap();
        let (g, _) = sample_sbm_retry(&cfg, seed, 100).unwrap();
        let w = iteration_matrix(&g, 1.0).unwrap();
        let s = eigenvalues(w.matrix(), MatrixKind::W, Some(seed)).unwrap();
        (w, s)
    }

    /// Null vector of `W^T - I` by inverse iteration on a slightly shifted system.
    fn perron_oracle(w: &IterationMatrix) -> DVector<f64> {
        let wt = w.matrix().transpose();
        let n = wt.nrows();
        let shifted = (&wt - DMatrix::identity(n, n) * (1.0 + 1e-10)).lu();
        let mut v = DVector::from_element(n, 1.0);
        for _ in 0..3 {
            v = shifted.solve(&v).unwrap();
            v /= v.sum();
        }
        v
    }

    #[test]
    fn block_model_perron_vector_matches_eigendecomposition() {
        let cfg = SbmConfig::two_level(6, 100, 0.05, 0.01, 1.0).unwrap();
        let (g, _) = sample_sbm_retry(&cfg, 11, 100).unwrap();
        let w = iteration_matrix(&g, 1.0).unwrap();
        let p = left_perron(&w, 1e-10, 10_000).unwrap();
        assert!(p.ell().iter().all(|&v| v > 0.0));
        assert!((p.ell().transpose() * w.matrix() - p.ell().transpose()).amax() <= 1e-10);
        assert!((perron_oracle(&w) - p.ell()).amax() <= 1e-8);
        let j = p.matrix();
        assert!((&j * &j - &j).amax() <= 1e-10);
    }

    #[test]
    fn perron_vector_vanishes_only_without_incoming_edges() {
        // At this size most realizations have a node nobody points to; its
        // value never reaches the others, so its weight is zero.
        let (w, spectrum) = paper_sample(11);
        assert!(spectrum.is_connected());
        let p = left_perron(&w, 1e-14, 100_000).unwrap();
        let a = w.matrix();
        for (k, &v) in p.ell().iter().enumerate() {
            let in_degree = (0..a.nrows()).filter(|&i| i != k && a[(i, k)] > 0.0).count();
            if in_degree == 0 {
                assert!(v.abs() <= 1e-14);
            } else {
                assert!(v > 0.0);
            }
        }
        assert!((perron_oracle(&w) - p.ell()).amax() <= 1e-8);
    }

    #[test]
    fn projector_removes_only_the_consensus_eigenvalue() {
        let (w, spectrum) = paper_sample(12);
        let p = left_perron(&w, 1e-12, 10_000).unwrap();
        let deflated = eigenvalues(&(w.matrix() - p.matrix()), MatrixKind::W, None).unwrap();
        let mut expected = spectrum.without_consensus();
        expected.push(Complex::new(0.0, 0.0));
        assert!(max_matching_distance(deflated.eigenvalues(), &expected) <= 1e-8);
    }

    #[test]
    fn convergence_factor_examples() {
        let s = SpectrumSample::new(vec![1.0, 0.5, -0.2].into_iter().map(|x| Complex::new(x, 0.0)).collect(), None, MatrixKind::W);
        assert!((convergence_factor(&s, None) - 0.5f64.ln()).abs() < 1e-15);
        let s = SpectrumSample::new(vec![1.0, 0.4, -0.3].into_iter().map(|x| Complex::new(x, 0.0)).collect(), None, MatrixKind::W);
        let square = Filter::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((convergence_factor(&s, Some(&square)) - 0.5 * 0.16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn block_model_factor_is_negative() {
        for seed in 0..5 {
            let (_, s) = paper_sample(100 + seed);
            if s.is_connected() {
                assert!(convergence_factor(&s, None) < 0.0);
            }
        }
    }

    #[test]
    fn histogram_examples() {
        let plane = Plane::new(-1.5, 1.5, 31, -1.5, 1.5, 31).unwrap();
        let id = eigenvalues(&DMatrix::identity(4, 4), MatrixKind::W, None).unwrap();
        let (d, overflow) = empirical_density(&id, &plane).unwrap();
        assert_eq!(overflow, 0);
        let (i, j) = plane.cell_of(Complex::new(1.0, 0.0)).unwrap();
        assert!((d.get(i, j) * plane.cell_area() - 1.0).abs() < 1e-12);
        assert!((d.mass() - 1.0).abs() < 1e-12);

        let s = eigenvalues(&random_matrix(40, 9), MatrixKind::Xi, None).unwrap();
        let (d, overflow) = empirical_density(&s, &plane).unwrap();
        assert!(d.mass() <= 1.0 + 1e-12);
        assert!((d.mass() + overflow as f64 / 40.0 - 1.0).abs() < 1e-12);
        for i in 0..plane.n_t {
            for j in 0..plane.n_s {
                assert_eq!(d.get(i, j), d.get(i, plane.n_s - 1 - j));
            }
        }
    }

    #[test]
    fn single_trial_average_is_that_trial() {
        let cfg = SbmConfig::two_level(6, 20, 0.2, 0.05, 1.0).unwrap();
        let plane = Plane::new(-0.6, 1.2, 19, -0.6, 0.6, 13).unwrap();
        let mc = expected_density_mc(&cfg, 1, &plane, 7, &McOptions::default()).unwrap();
        let (s, _) = sample_w_spectrum(&cfg, trial_seed(7, 0), 100).unwrap();
        let (d, _) = empirical_density(&s, &plane).unwrap();
        assert_eq!(mc.density, d);
    }

    #[test]
    fn averaging_is_thread_count_independent() {
        let cfg = SbmConfig::two_level(6, 20, 0.2, 0.05, 1.0).unwrap();
        let plane = Plane::new(-0.6, 1.2, 19, -0.6, 0.6, 13).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| expected_density_mc(&cfg, 12, &plane, 3, &McOptions::default()).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.density, b.density);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn report_lists_every_trial() {
        let cfg = SbmConfig::two_level(6, 20, 0.2, 0.05, 1.0).unwrap();
        let plane = Plane::new(-0.6, 1.2, 19, -0.6, 0.6, 13).unwrap();
        let mc = expected_density_mc(&cfg, 3, &plane, 3, &McOptions::default()).unwrap();
        let mut buf = Vec::new();
        mc.write_report(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5 + 3);
    }
}
