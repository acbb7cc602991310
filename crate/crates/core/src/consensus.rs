//! Filtered consensus dynamics and Monte-Carlo filter comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{mean_spectrum_filter, oracle_filter, per_iteration_rate, DesignOptions, Filter};
use crate::graph_models::{mean_spectrum, IterationMatrix, SbmConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::{convergence_factor, sample_w_spectrum, trial_seed, ConsensusProjector};

/// Errors below this are treated as round-off.
pub const ERROR_FLOOR: f64 = 1e-12;
/// First iteration used when fitting a rate.
const RATE_WINDOW_START: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub filter: Option<Filter>,
    pub n_iters: usize,
}

fn check_run(w: &IterationMatrix, x0: &DVector<f64>, filter: Option<&Filter>, n_iters: usize) -> Result<()> {
    if x0.len() != w.dim() {
        return Err(Error::InvalidInput(format!("x0 has length {}, W is {}x{}", x0.len(), w.dim(), w.dim())));
    }
    if let Some(f) = filter {
        if n_iters % f.degree() != 0 {
            return Err(Error::InvalidInput(format!("n_iters={n_iters} is not a multiple of the degree {}", f.degree())));
        }
    }
    Ok(())
}

/// `x_n = W x_{n-1}`; every `d` steps the newest state is replaced by
/// `sum_k a_k x_{n-d+k}` over the last `d + 1` states.
pub fn run_consensus(w: &IterationMatrix, x0: &DVector<f64>, filter: Option<&Filter>, n_iters: usize) -> Result<Trajectory> {
    check_run(w, x0, filter, n_iters)?;
    let mut states = Vec::with_capacity(n_iters + 1);
    states.push(x0.clone());
    for n in 1..=n_iters {
        let mut next = w.matrix() * &states[n - 1];
        if let Some(f) = filter {
            let d = f.degree();
            if n % d == 0 {
                let a = f.coefficients();
                let mut acc = &next * a[d];
                for (k, &ak) in a[..d].iter().enumerate() {
                    acc += &states[n - d + k] * ak;
                }
                next = acc;
            }
        }
        states.push(next);
    }
    Ok(Trajectory { states, filter: filter.cloned(), n_iters })
}

/// `p(W)` by Horner's rule.
pub fn filter_matrix(w: &IterationMatrix, filter: &Filter) -> DMatrix<f64> {
    let n = w.dim();
    let id = DMatrix::<f64>::identity(n, n);
    filter.coefficients().iter().rev().fold(DMatrix::zeros(n, n), |acc, &a| acc * w.matrix() + &id * a)
}

/// Same dynamics with the filter applied as the matrix `p(W)`.
pub fn run_consensus_polynomial(w: &IterationMatrix, x0: &DVector<f64>, filter: Option<&Filter>, n_iters: usize) -> Result<Trajectory> {
    check_run(w, x0, filter, n_iters)?;
    let Some(f) = filter else {
        return run_consensus(w, x0, None, n_iters);
    };
    let d = f.degree();
    let p = filter_matrix(w, f);
    let mut states = Vec::with_capacity(n_iters + 1);
    states.push(x0.clone());
    for n in 1..=n_iters {
        let next = if n % d == 0 { &p * &states[n - d] } else { w.matrix() * &states[n - 1] };
        states.push(next);
    }
    Ok(Trajectory { states, filter: filter.cloned(), n_iters })
}

/// `||x_n - J x_0||_2` for every state.
pub fn error_trajectory(traj: &Trajectory, projector: &ConsensusProjector) -> Result<Vec<f64>> {
    let x0 = &traj.states[0];
    if x0.len() != projector.ell().len() {
        return Err(Error::InvalidInput("projector and trajectory dimensions differ".into()));
    }
    let target = projector.average(x0);
    Ok(traj.states.iter().map(|x| x.map(|v| v - target).norm()).collect())
}

/// Least-squares slope of `ln e_n` from `n = 5` up to the first error below
/// [`ERROR_FLOOR`].
pub fn estimate_rate(errors: &[f64]) -> Result<f64> {
    if errors.len() < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 errors, got {}", errors.len())));
    }
    let end = errors.iter().position(|&e| e < ERROR_FLOOR).unwrap_or(errors.len());
    if end < RATE_WINDOW_START + 2 {
        return Err(Error::RateUndefined("errors reach the floor before the fitting window".into()));
    }
    let window = RATE_WINDOW_START..end;
    let count = window.len() as f64;
    let mean_n = window.clone().map(|n| n as f64).sum::<f64>() / count;
    let mean_y = window.clone().map(|n| errors[n].ln()).sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for n in window {
        let dx = n as f64 - mean_n;
        sxy += dx * (errors[n].ln() - mean_y);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

/// Standard-normal entries shifted to `l^T x = 1`.
pub fn default_x0(projector: &ConsensusProjector, seed: u64) -> DVector<f64> {
    let n = projector.ell().len();
    let mut rng = rng_from_seed(seed);
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = projector.average(&x) - 1.0;
    x.map(|v| v - shift)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Trivial,
    MeanSpectrum,
    Proposed,
    Oracle,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Trivial, FilterKind::MeanSpectrum, FilterKind::Proposed, FilterKind::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Trivial => "trivial",
            FilterKind::MeanSpectrum => "mean_spectrum",
            FilterKind::Proposed => "proposed",
            FilterKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown filter kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: FilterKind,
    pub degree: usize,
    pub mean_rate: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std_rate: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn get(&self, kind: FilterKind, degree: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.kind == kind && r.degree == degree)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "filter,degree,mean_rate,std_rate,trials")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.kind, r.degree, r.mean_rate, r.std_rate, r.trials)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "filter,degree,mean_rate,std_rate,trials" => {}
            _ => return Err(Error::Parse("unexpected comparison header".into())),
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}")));
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer {s:?}")));
            rows.push(ComparisonRow {
                kind: f[0].parse()?,
                degree: int(f[1])?,
                mean_rate: num(f[2])?,
                std_rate: num(f[3])?,
                trials: int(f[4])?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRates {
    pub trial: usize,
    pub seed: u64,
    pub connected: bool,
    /// `(kind, degree) -> rate`; kinds that do not exist at a degree are absent.
    pub rates: BTreeMap<(FilterKind, usize), f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub table: ComparisonTable,
    pub trials: Vec<TrialRates>,
}

impl Comparison {
    pub fn failed(&self) -> usize {
        self.trials.iter().filter(|t| t.failure.is_some()).count()
    }

    /// `trial,seed,connected,filter,degree,rate`, one row per trial and filter.
    pub fn write_trial_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,seed,connected,filter,degree,rate")?;
        for t in &self.trials {
            if let Some(reason) = &t.failure {
                writeln!(w, "{},{},{},failed,0,NaN # {}", t.trial, t.seed, t.connected, reason.replace(',', ";"))?;
                continue;
            }
            for ((kind, degree), rate) in &t.rates {
                writeln!(w, "{},{},{},{},{},{}", t.trial, t.seed, t.connected, kind, degree, rate)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub design: DesignOptions,
    pub max_sample_attempts: usize,
    pub exclude_disconnected: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { design: DesignOptions::default(), max_sample_attempts: 100, exclude_disconnected: false }
    }
}

fn rates_for_trial(
    config: &SbmConfig,
    proposed: &BTreeMap<usize, Filter>,
    baselines: &BTreeMap<usize, Filter>,
    trial: usize,
    base_seed: u64,
    opts: &CompareOptions,
) -> TrialRates {
    let seed = trial_seed(base_seed, trial);
    let mut out = TrialRates { trial, seed, connected: false, rates: BTreeMap::new(), failure: None };
    let spectrum = match sample_w_spectrum(config, seed, opts.max_sample_attempts) {
        Ok((s, _)) => s,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    out.seed = spectrum.seed().unwrap_or(seed);
    out.connected = spectrum.is_connected();
    let unfiltered = convergence_factor(&spectrum, None);
    for (&d, filter) in proposed {
        out.rates.insert((FilterKind::Trivial, d), unfiltered);
        if let Some(b) = baselines.get(&d) {
            out.rates.insert((FilterKind::MeanSpectrum, d), per_iteration_rate(b, &spectrum));
        }
        out.rates.insert((FilterKind::Proposed, d), per_iteration_rate(filter, &spectrum));
        match oracle_filter(&spectrum, d, &opts.design) {
            Ok(o) => {
                out.rates.insert((FilterKind::Oracle, d), per_iteration_rate(&o, &spectrum));
            }
            Err(e) => {
                out.failure = Some(format!("oracle design at d={d}: {e}"));
                out.rates.clear();
                return out;
            }
        }
    }
    out
}

/// Per-iteration rates of the four filter kinds over fresh realizations.
///
/// `proposed` maps each degree to its filter, designed once for the
/// configuration. Trial `k` uses the same realization as trial `k` of
/// [`crate::spectral::expected_density_mc`] with the same base seed.
pub fn compare_filters(
    config: &SbmConfig,
    proposed: &BTreeMap<usize, Filter>,
    trials: usize,
    base_seed: u64,
    opts: &CompareOptions,
) -> Result<Comparison> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if proposed.is_empty() {
        return Err(Error::InvalidInput("no degrees to compare".into()));
    }
    for (&d, f) in proposed {
        if f.degree() != d {
            return Err(Error::InvalidInput(format!("filter under degree {d} has degree {}", f.degree())));
        }
    }
    let mean_eigs: Vec<f64> = mean_spectrum(config, true)?.to_iteration(config.alpha()).values().iter().map(|v| v.0).collect();
    let baselines: BTreeMap<usize, Filter> =
        proposed.keys().filter_map(|&d| mean_spectrum_filter(&mean_eigs, d).ok().map(|f| (d, f))).collect();

    let records: Vec<TrialRates> = (0..trials)
        .into_par_iter()
        .map(|trial| rates_for_trial(config, proposed, &baselines, trial, base_seed, opts))
        .collect();

    let used: Vec<&TrialRates> =
        records.iter().filter(|t| t.failure.is_none() && (t.connected || !opts.exclude_disconnected)).collect();
    if used.is_empty() {
        return Err(Error::McFailure { failed: records.len(), trials });
    }
    let mut rows = Vec::new();
    for kind in FilterKind::ALL {
        for &d in proposed.keys() {
            let values: Vec<f64> = used.iter().filter_map(|t| t.rates.get(&(kind, d)).copied()).collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(ComparisonRow { kind, degree: d, mean_rate: mean, std_rate: std, trials: values.len() });
        }
    }
    Ok(Comparison { table: ComparisonTable { rows }, trials: records })
}

/// Rate fitted to a simulated trajectory, as a cross-check of the spectral rate.
pub fn simulated_rate(w: &IterationMatrix, projector: &ConsensusProjector, filter: Option<&Filter>, n_iters: usize, seed: u64) -> Result<f64> {
    let x0 = default_x0(projector, derive_seed(seed, 0x5eed));
    let traj = run_consensus(w, &x0, filter, n_iters)?;
    estimate_rate(&error_trajectory(&traj, projector)?)
}
