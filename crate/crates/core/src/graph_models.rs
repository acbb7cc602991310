//! Directed stochastic block model: sampling, mean and variance structure,
//! and the consensus iteration matrix built from a realized graph.
//!
//! Nodes are numbered population by population: node `i` belongs to
//! population `i / S`. Every ordered pair `(i, j)` with `i != j` is an edge
//! independently with probability `theta[pop(i)][pop(j)]`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Tolerance used when grouping numerically equal eigenvalues.
const GROUPING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    populations: usize,
    population_size: usize,
    theta: DMatrix<f64>,
    alpha: f64,
}

impl SbmConfig {
    pub fn new(populations: usize, population_size: usize, theta: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if populations == 0 || population_size == 0 {
            return Err(Error::InvalidInput("population count and size must be positive".into()));
        }
        if theta.nrows() != populations || theta.ncols() != populations {
            return Err(Error::InvalidInput(format!(
                "theta is {}x{}, expected {populations}x{populations}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        for p in 0..populations {
            for q in 0..populations {
                let v = theta[(p, q)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("theta[{p}][{q}] = {v} is not a probability")));
                }
                if (v - theta[(q, p)]).abs() > 1e-15 {
                    return Err(Error::InvalidInput(format!("theta is not symmetric at ({p}, {q})")));
                }
            }
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidInput("alpha must be finite".into()));
        }
        Ok(Self { populations, population_size, theta, alpha })
    }

    /// Block model with `diag` inside populations and `off` between them.
    pub fn two_level(populations: usize, population_size: usize, diag: f64, off: f64, alpha: f64) -> Result<Self> {
        let theta = DMatrix::from_fn(populations, populations, |p, q| if p == q { diag } else { off });
        Self::new(populations, population_size, theta, alpha)
    }

    pub fn populations(&self) -> usize {
        self.populations
    }

    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn node_count(&self) -> usize {
        self.populations * self.population_size
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn population_of(&self, node: usize) -> usize {
        node / self.population_size
    }

    fn probability(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.theta[(self.population_of(i), self.population_of(j))]
        }
    }
}

/// A realized directed graph stored as sorted out-neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    out: Vec<Vec<usize>>,
    out_degrees: Vec<usize>,
}

impl DirectedGraph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = vec![Vec::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            out[i].push(j);
        }
        for row in &mut out {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self::from_lists(out))
    }

    fn from_lists(out: Vec<Vec<usize>>) -> Self {
        let out_degrees = out.iter().map(Vec::len).collect();
        Self { out, out_degrees }
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn out_degrees(&self) -> &[usize] {
        &self.out_degrees
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.out_degrees.iter().sum()
    }

    pub fn first_isolated(&self) -> Option<usize> {
        self.out_degrees.iter().position(|&d| d == 0)
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut a = DMatrix::zeros(n, n);
        for (i, row) in self.out.iter().enumerate() {
            for &j in row {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Edge list: a `N <count>` header, then one zero-indexed `i j` per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N {}", self.node_count())?;
        for (i, row) in self.out.iter().enumerate() {
            for &j in row {
                writeln!(w, "{i} {j}")?;
            }
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))??;
        let n = header
            .strip_prefix("N ")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse(format!("bad edge list header {header:?}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
                _ => return Err(Error::Parse(format!("bad edge line {line:?}"))),
            }
        }
        Self::from_edges(n, edges)
    }
}

fn sample_lists(config: &SbmConfig, seed: u64) -> Vec<Vec<usize>> {
    let n = config.node_count();
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| (0..n).filter(|&j| i != j && rng.random::<f64>() < config.probability(i, j)).collect())
        .collect()
}

/// Draws one realization of the block model.
pub fn sample_sbm(config: &SbmConfig, seed: u64) -> Result<DirectedGraph> {
    let graph = DirectedGraph::from_lists(sample_lists(config, seed));
    match graph.first_isolated() {
        Some(node) => Err(Error::IsolatedNode { node }),
        None => Ok(graph),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleInfo {
    pub seed: u64,
    pub attempts: usize,
}

/// Samples until no node is isolated. Attempt `k > 0` uses `derive_seed(seed, k)`.
pub fn sample_sbm_retry(config: &SbmConfig, seed: u64, max_attempts: usize) -> Result<(DirectedGraph, SampleInfo)> {
    let mut last = Error::InvalidInput("max_attempts must be positive".into());
    for attempt in 0..max_attempts {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt as u64) };
        match sample_sbm(config, s) {
            Ok(g) => return Ok((g, SampleInfo { seed: s, attempts: attempt + 1 })),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// `E[A]` in block form: `theta ⊗ J_S` with the diagonal zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAdjacency {
    theta: DMatrix<f64>,
    population_size: usize,
}

impl MeanAdjacency {
    pub fn block_values(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Correction added to the diagonal of `theta ⊗ J_S` for population `p`.
    pub fn diagonal_correction(&self, p: usize) -> f64 {
        -self.theta[(p, p)]
    }

    pub fn node_count(&self) -> usize {
        self.theta.nrows() * self.population_size
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.theta[(i / self.population_size, j / self.population_size)]
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.node_count();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

pub fn mean_adjacency(config: &SbmConfig) -> MeanAdjacency {
    MeanAdjacency { theta: config.theta.clone(), population_size: config.population_size }
}

/// Distinct eigenvalues with multiplicities, sorted in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpectrum {
    values: Vec<(f64, usize)>,
}

impl MeanSpectrum {
    pub fn new(mut values: Vec<(f64, usize)>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&(v, m)| !v.is_finite() || m == 0) {
            return Err(Error::InvalidInput("spectrum needs finite values with positive multiplicities".into()));
        }
        values.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(Self { values })
    }

    /// Groups raw eigenvalues that agree to within a relative `1e-9`.
    pub fn from_eigenvalues(eigs: &[f64]) -> Result<Self> {
        let mut sorted = eigs.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut groups: Vec<(f64, usize)> = Vec::new();
        for v in sorted {
            match groups.last_mut() {
                Some((rep, m)) if (*rep - v).abs() <= GROUPING_TOL * rep.abs().max(1.0) => {
                    *rep = (*rep * *m as f64 + v) / (*m as f64 + 1.0);
                    *m += 1;
                }
                _ => groups.push((v, 1)),
            }
        }
        Self::new(groups)
    }

    pub fn values(&self) -> &[(f64, usize)] {
        &self.values
    }

    pub fn node_count(&self) -> usize {
        self.values.iter().map(|&(_, m)| m).sum()
    }

    pub fn distinct_count(&self) -> usize {
        self.values.len()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().map(|&(v, _)| v.abs()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut values: Vec<_> = self.values.iter().map(|&(v, m)| (v * factor, m)).collect();
        values.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self { values }
    }

    /// Spectrum of `(1 - alpha) I + alpha X` given the spectrum of `X`.
    pub fn to_iteration(&self, alpha: f64) -> Self {
        let mut values: Vec<_> = self.values.iter().map(|&(v, m)| (1.0 - alpha + alpha * v, m)).collect();
        values.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self { values }
    }

    pub fn expanded(&self) -> Vec<f64> {
        self.values.iter().flat_map(|&(v, m)| std::iter::repeat_n(v, m)).collect()
    }
}

/// Closed-form spectrum of `E[A]` (divided by `gamma` when `scaled`).
///
/// Vectors that are constant on each population span an invariant subspace on
/// which `E[A]` acts as `S theta - diag(theta_pp)`; vectors summing to zero
/// inside population `p` are eigenvectors with eigenvalue `-theta_pp`.
pub fn mean_spectrum(config: &SbmConfig, scaled: bool) -> Result<MeanSpectrum> {
    let m = config.populations;
    let s = config.population_size as f64;
    let mut reduced = config.theta.map(|v| v * s);
    for p in 0..m {
        reduced[(p, p)] -= config.theta[(p, p)];
    }
    let mut eigs: Vec<f64> = SymmetricEigen::new(reduced).eigenvalues.iter().copied().collect();
    for p in 0..m {
        eigs.extend(std::iter::repeat_n(-config.theta[(p, p)], config.population_size - 1));
    }
    let spectrum = MeanSpectrum::from_eigenvalues(&eigs)?;
    if scaled {
        let gamma = spectrum.spectral_radius();
        if gamma <= 0.0 {
            return Err(Error::DegenerateModel("mean adjacency is zero".into()));
        }
        Ok(spectrum.scaled(1.0 / gamma))
    } else {
        Ok(spectrum)
    }
}

/// `gamma = rho(E[A])`, the divisor that turns `A` into `Xi = A / gamma`.
pub fn scaling_gamma(config: &SbmConfig) -> Result<f64> {
    let gamma = mean_spectrum(config, false)?.spectral_radius();
    if gamma > 0.0 {
        Ok(gamma)
    } else {
        Err(Error::DegenerateModel("all connection probabilities are zero".into()))
    }
}

/// Entry variances of the centered adjacency, `theta (1 - theta)` per block.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    block_variance: DMatrix<f64>,
    population_size: usize,
    scaling: f64,
    row_sum: f64,
    col_sum: f64,
}

impl VarianceProfile {
    pub fn block_variance(&self) -> &DMatrix<f64> {
        &self.block_variance
    }

    /// Divisor applied to every entry (`gamma^2` for the scaled model, else 1).
    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn row_sum(&self) -> f64 {
        self.row_sum
    }

    pub fn col_sum(&self) -> f64 {
        self.col_sum
    }

    pub fn node_count(&self) -> usize {
        self.block_variance.nrows() * self.population_size
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.block_variance[(i / self.population_size, j / self.population_size)] / self.scaling
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.node_count();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

pub fn variance_profile(config: &SbmConfig, scaled: bool) -> Result<VarianceProfile> {
    let m = config.populations;
    let s = config.population_size as f64;
    let block_variance = config.theta.map(|p| p * (1.0 - p));
    let scaling = if scaled { scaling_gamma(config)?.powi(2) } else { 1.0 };
    let line_sum = |p: usize, by_row: bool| {
        (0..m)
            .map(|q| {
                let v = if by_row { block_variance[(p, q)] } else { block_variance[(q, p)] };
                if p == q { (s - 1.0) * v } else { s * v }
            })
            .sum::<f64>()
            / scaling
    };
    let sums: Vec<f64> = (0..m).flat_map(|p| [line_sum(p, true), line_sum(p, false)]).collect();
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min > 1e-12 * max.abs().max(1.0) {
        return Err(Error::NodeTransitivityViolation { min, max });
    }
    let (row_sum, col_sum) = (line_sum(0, true), line_sum(0, false));
    Ok(VarianceProfile { block_variance, population_size: config.population_size, scaling, row_sum, col_sum })
}

/// `W = I - alpha (I - D^{-1} A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMatrix {
    w: DMatrix<f64>,
    alpha: f64,
}

impl IterationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

pub fn iteration_matrix(graph: &DirectedGraph, alpha: f64) -> Result<IterationMatrix> {
    if let Some(node) = graph.first_isolated() {
        return Err(Error::IsolatedNode { node });
    }
    let n = graph.node_count();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let weight = alpha / graph.out_degrees[i] as f64;
        w[(i, i)] = 1.0 - alpha;
        for &j in &graph.out[i] {
            w[(i, j)] = weight;
        }
    }
    Ok(IterationMatrix { w, alpha })
}
