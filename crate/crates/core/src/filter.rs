//! Filtering regions and minimax polynomial filters.
//!
//! A filter is a real polynomial `p(lambda) = sum_k a_k lambda^k` with
//! `p(1) = 1`. Applied every `d` consensus steps it replaces `W^d` by `p(W)`,
//! so the per-iteration convergence factor is `(1/d) ln max |p(lambda)|` over
//! the non-consensus spectrum. Designs minimize `max |p|^2` over points
//! sampled from the region where the predicted density is non-negligible.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Plane};
use crate::spectral::{convergence_factor, SpectrumSample};

/// Tolerance on `sum a_k = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// The component around the consensus eigenvalue is dropped only when it
/// carries at most this fraction of the total mass.
const CONSENSUS_COMPONENT_MAX_MASS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    degree: usize,
    coefficients: Vec<f64>,
    achieved_epsilon: f64,
}

impl Filter {
    /// Coefficients `a_0 .. a_d`, lowest order first.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        Self::with_epsilon(coefficients, f64::NAN)
    }

    pub fn with_epsilon(coefficients: Vec<f64>, achieved_epsilon: f64) -> Result<Self> {
        let f = Self { degree: coefficients.len().saturating_sub(1), coefficients, achieved_epsilon };
        f.validate()?;
        Ok(f)
    }

    /// Checks the invariants of a deserialized filter.
    pub fn validate(&self) -> Result<()> {
        if self.coefficients.len() < 2 || self.degree + 1 != self.coefficients.len() {
            return Err(Error::InvalidInput("a filter needs degree >= 1 and d + 1 coefficients".into()));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("filter coefficients must be finite".into()));
        }
        let sum: f64 = self.coefficients.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidInput(format!("filter coefficients sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `p(lambda) = lambda^d`: plain iteration.
    pub fn trivial(degree: usize) -> Result<Self> {
        let mut a = vec![0.0; degree + 1];
        a[degree] = 1.0;
        Self::new(a)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Largest `|p|^2` over the design points; NaN when not designed.
    pub fn achieved_epsilon(&self) -> f64 {
        self.achieved_epsilon
    }

    pub fn eval(&self, z: Complex<f64>) -> Complex<f64> {
        self.coefficients.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &a| acc * z + a)
    }

    /// Largest `|p(lambda)|^2` over `points`.
    pub fn max_response(&self, points: &[Complex<f64>]) -> f64 {
        points.iter().map(|&z| self.eval(z).norm_sqr()).fold(0.0, f64::max)
    }
}

/// Cells of a density grid where the predicted density exceeds `tau`, away
/// from the consensus eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    plane: Plane,
    mask: Vec<bool>,
    kappa: f64,
    tau: f64,
    boundary: Vec<Vec<Complex<f64>>>,
    consensus_cells_dropped: usize,
}

impl Region {
    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        self.mask[self.plane.index(i, j)]
    }

    /// Whether `z` falls in a masked cell.
    pub fn contains(&self, z: Complex<f64>) -> bool {
        self.plane.cell_of(z).is_some_and(|(i, j)| self.contains_cell(i, j))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cell_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Closed outlines of the masked cells, corners in order.
    pub fn boundary(&self) -> &[Vec<Complex<f64>>] {
        &self.boundary
    }

    /// Cells removed because they belonged to the small blob around 1.
    pub fn consensus_cells_dropped(&self) -> usize {
        self.consensus_cells_dropped
    }

    /// `t,s` rows; loops are separated by a `NaN,NaN` row.
    pub fn write_boundary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,s")?;
        for (k, ring) in self.boundary.iter().enumerate() {
            if k > 0 {
                writeln!(w, "NaN,NaN")?;
            }
            for z in ring {
                writeln!(w, "{},{}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Parses the output of [`Region::write_boundary_csv`].
pub fn read_boundary_csv<R: std::io::BufRead>(r: R) -> Result<Vec<Vec<Complex<f64>>>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "t,s" => {}
        _ => return Err(Error::Parse("expected header t,s".into())),
    }
    let mut loops = vec![Vec::new()];
    for line in lines {
        let line = line?;
        let (a, b) = line.split_once(',').ok_or_else(|| Error::Parse(format!("bad row {line:?}")))?;
        let (t, s): (f64, f64) = (
            a.trim().parse().map_err(|_| Error::Parse(format!("bad t in {line:?}")))?,
            b.trim().parse().map_err(|_| Error::Parse(format!("bad s in {line:?}")))?,
        );
        if t.is_nan() {
            loops.push(Vec::new());
        } else {
            loops.last_mut().unwrap().push(Complex::new(t, s));
        }
    }
    loops.retain(|l| !l.is_empty());
    Ok(loops)
}

fn neighbors8(plane: &Plane, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    (-1i64..=1).flat_map(move |di| (-1i64..=1).map(move |dj| (di, dj))).filter_map(move |(di, dj)| {
        let (a, b) = (i as i64 + di, j as i64 + dj);
        ((di, dj) != (0, 0) && a >= 0 && b >= 0 && (a as usize) < plane.n_t && (b as usize) < plane.n_s)
            .then_some((a as usize, b as usize))
    })
}

/// 8-connected component of `mask` containing `seed`.
fn component(plane: &Plane, mask: &[bool], seed: (usize, usize)) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::from([seed]);
    seen[plane.index(seed.0, seed.1)] = true;
    while let Some((i, j)) = queue.pop_front() {
        out.push(plane.index(i, j));
        for (a, b) in neighbors8(plane, i, j) {
            let k = plane.index(a, b);
            if mask[k] && !seen[k] {
                seen[k] = true;
                queue.push_back((a, b));
            }
        }
    }
    out
}

/// Outline of the union of masked cells as closed corner loops.
fn trace_boundary(plane: &Plane, mask: &[bool]) -> Vec<Vec<Complex<f64>>> {
    // Corners are addressed on the doubled lattice so cell (i, j) spans
    // (2i-1 .. 2i+1, 2j-1 .. 2j+1) in half-cell units.
    type Corner = (i64, i64);
    let inside = |i: i64, j: i64| {
        i >= 0 && j >= 0 && (i as usize) < plane.n_t && (j as usize) < plane.n_s && mask[plane.index(i as usize, j as usize)]
    };
    let mut edges: BTreeMap<Corner, Vec<Corner>> = BTreeMap::new();
    for i in 0..plane.n_t as i64 {
        for j in 0..plane.n_s as i64 {
            if !inside(i, j) {
                continue;
            }
            let (t0, t1, s0, s1) = (2 * i - 1, 2 * i + 1, 2 * j - 1, 2 * j + 1);
            // Counter-clockwise around the cell, emitting only exposed sides.
            if !inside(i, j - 1) {
                edges.entry((t0, s0)).or_default().push((t1, s0));
            }
            if !inside(i + 1, j) {
                edges.entry((t1, s0)).or_default().push((t1, s1));
            }
            if !inside(i, j + 1) {
                edges.entry((t1, s1)).or_default().push((t0, s1));
            }
            if !inside(i - 1, j) {
                edges.entry((t0, s1)).or_default().push((t0, s0));
            }
        }
    }
    let to_point = |(a, b): Corner| Complex::new(plane.t_min + a as f64 * plane.dt() / 2.0, plane.s_min + b as f64 * plane.ds() / 2.0);
    let mut loops = Vec::new();
    while let Some((&start, _)) = edges.iter().find(|(_, v)| !v.is_empty()) {
        let mut ring = vec![to_point(start)];
        let mut at = start;
        loop {
            let next = edges.get_mut(&at).and_then(|v| if v.is_empty() { None } else { Some(v.remove(0)) });
            match next {
                Some(n) if n == start => break,
                Some(n) => {
                    ring.push(to_point(n));
                    at = n;
                }
                None => break,
            }
        }
        ring.push(ring[0]);
        loops.push(ring);
    }
    loops
}

/// Thresholds the density at `tau` and removes the `kappa`-ball around 1.
///
/// The density is first averaged with its mirror image so the mask is exactly
/// conjugate-symmetric. A grid too coarse to resolve the consensus eigenvalue
/// leaves a small blob around 1 that is wider than `kappa`; when the connected
/// component containing 1 carries at most 5% of the mass it is dropped too.
pub fn extract_region(density: &DensityGrid, kappa: f64, tau: f64) -> Result<Region> {
    let plane = *density.plane();
    plane.validate()?;
    if !plane.is_conjugate_symmetric() {
        return Err(Error::InvalidInput("region extraction needs an s-range symmetric about 0".into()));
    }
    if !(kappa >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("bad kappa {kappa} or tau {tau}")));
    }
    let sym: Vec<f64> = (0..plane.len())
        .map(|k| {
            let (i, j) = (k / plane.n_s, k % plane.n_s);
            0.5 * (density.get(i, j) + density.get(i, plane.n_s - 1 - j))
        })
        .collect();
    let above: Vec<bool> = sym.iter().map(|&v| v > tau).collect();
    let mut mask: Vec<bool> = (0..plane.len())
        .map(|k| above[k] && (plane.point(k / plane.n_s, k % plane.n_s) - 1.0).norm() > kappa)
        .collect();

    let mut consensus_cells_dropped = 0;
    if let Some(seed) = plane.cell_of(Complex::new(1.0, 0.0)) {
        if above[plane.index(seed.0, seed.1)] {
            let blob = component(&plane, &above, seed);
            let total: f64 = sym.iter().sum();
            let blob_mass: f64 = blob.iter().map(|&k| sym[k]).sum();
            if blob_mass <= CONSENSUS_COMPONENT_MAX_MASS * total {
                for k in blob {
                    consensus_cells_dropped += mask[k] as usize;
                    mask[k] = false;
                }
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyRegion { kappa, tau });
    }
    let boundary = trace_boundary(&plane, &mask);
    Ok(Region { plane, mask, kappa, tau, boundary, consensus_cells_dropped })
}

/// Design points drawn from a region.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoints {
    pub points: Vec<Complex<f64>>,
    pub scheme: String,
    /// Distance between retained interior points along the t-axis.
    pub spacing: f64,
}

impl SamplePoints {
    /// Arbitrary points, closed under conjugation.
    pub fn from_points(points: &[Complex<f64>], scheme: &str) -> Self {
        let mut all: Vec<Complex<f64>> = Vec::with_capacity(2 * points.len());
        for z in points {
            all.push(*z);
            if z.im != 0.0 {
                all.push(z.conj());
            }
        }
        sort_points(&mut all);
        all.dedup();
        Self { points: all, scheme: scheme.to_string(), spacing: f64::NAN }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn sort_points(points: &mut [Complex<f64>]) {
    points.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Masked cell centers decimated to at most `max_points`, every boundary cell
/// center, and the mirror image of each.
pub fn sample_region(region: &Region, max_points: usize) -> Result<SamplePoints> {
    if max_points == 0 {
        return Err(Error::InvalidInput("max_points must be positive".into()));
    }
    let plane = region.plane;
    let mid = (plane.n_s - 1) / 2;
    // With a symmetric s-axis, node j >= (n_s - 1)/2 has s >= 0.
    let upper: Vec<(usize, usize)> = (0..plane.n_t)
        .flat_map(|i| (mid..plane.n_s).map(move |j| (i, j)))
        .filter(|&(i, j)| region.contains_cell(i, j))
        .collect();
    let budget = (max_points / 2).max(1);
    let stride = upper.len().div_ceil(budget).max(1);
    let is_boundary = |i: usize, j: usize| {
        [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)].iter().any(|&(di, dj)| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            a < 0 || b < 0 || a as usize >= plane.n_t || b as usize >= plane.n_s || !region.contains_cell(a as usize, b as usize)
        })
    };
    let mut chosen: Vec<usize> = upper
        .iter()
        .enumerate()
        .filter(|&(k, &(i, j))| k % stride == 0 || is_boundary(i, j))
        .map(|(_, &(i, j))| plane.index(i, j))
        .collect();
    chosen.sort_unstable();
    chosen.dedup();
    let mut points = Vec::with_capacity(2 * chosen.len());
    for k in chosen {
        let z = plane.point(k / plane.n_s, k % plane.n_s);
        let on_axis = plane.n_s % 2 == 1 && k % plane.n_s == mid;
        if on_axis {
            points.push(Complex::new(z.re, 0.0));
        } else {
            points.push(z);
            points.push(z.conj());
        }
    }
    sort_points(&mut points);
    Ok(SamplePoints { points, scheme: format!("cell-centers/stride{stride}+boundary+conjugates"), spacing: plane.dt() * stride as f64 })
}

/// `Q(lambda)_jk = Re(conj(lambda^j) lambda^k)`, so that `a^T Q a = |p(lambda)|^2`.
pub fn build_q(lambda: Complex<f64>, d: usize) -> DMatrix<f64> {
    let powers: Vec<Complex<f64>> = std::iter::successors(Some(Complex::new(1.0, 0.0)), |p| Some(p * lambda)).take(d + 1).collect();
    DMatrix::from_fn(d + 1, d + 1, |j, k| (powers[j].conj() * powers[k]).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Newton steps allowed per centering.
    pub max_newton: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_newton: 200 }
    }
}

/// Upper-half representatives: constraints at `z` and `conj(z)` coincide for
/// real coefficients.
fn constraint_points(points: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut reps: Vec<Complex<f64>> = points.iter().map(|z| Complex::new(z.re, z.im.abs())).collect();
    sort_points(&mut reps);
    reps.dedup();
    reps
}

/// `prod (lambda - r) / prod (1 - r)` over real roots and conjugate pairs,
/// padded with powers of `lambda` up to degree `d`.
fn interpolating_filter(roots: &[Complex<f64>], d: usize) -> Option<Vec<f64>> {
    fn push_root(poly: &mut Vec<Complex<f64>>, r: Complex<f64>) {
        let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (k, c) in poly.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        *poly = next;
    }
    let mut poly = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        push_root(&mut poly, r);
        if r.im != 0.0 {
            push_root(&mut poly, r.conj());
        }
    }
    while poly.len() < d + 1 {
        push_root(&mut poly, Complex::new(0.0, 0.0));
    }
    let at_one: Complex<f64> = poly.iter().sum();
    if at_one.norm() < 1e-12 {
        return None;
    }
    let mut a: Vec<f64> = poly.iter().map(|c| (c / at_one).re).collect();
    let top = a.len() - 1;
    a[top] = 1.0 - a[..top].iter().sum::<f64>();
    Some(a)
}

/// Coefficients `a = e_d + Z x` with `Z = [e_k - e_d]`, so `sum a = 1` holds
/// by construction.
fn coefficients_of(x: &DVector<f64>) -> Vec<f64> {
    let mut a: Vec<f64> = x.iter().copied().collect();
    a.push(1.0 - x.sum());
    a
}

struct Barrier {
    /// `(Z^T Q_i Z, Z^T Q_i e_d, e_d^T Q_i e_d)` for each constraint.
    quad: Vec<(DMatrix<f64>, DVector<f64>, f64)>,
}

impl Barrier {
    fn new(points: &[Complex<f64>], d: usize) -> Self {
        let z = DMatrix::from_fn(d + 1, d, |r, c| {
            if r == c {
                1.0
            } else if r == d {
                -1.0
            } else {
                0.0
            }
        });
        let quad = points
            .iter()
            .map(|&p| {
                let q = build_q(p, d);
                let zq = z.transpose() * &q;
                (&zq * &z, zq.column(d).into_owned(), q[(d, d)])
            })
            .collect();
        Self { quad }
    }

    /// `f_i(x) = x^T A x + 2 b^T x + c`.
    fn responses(&self, x: &DVector<f64>) -> Vec<f64> {
        self.quad.iter().map(|(a, b, c)| (a * x).dot(x) + 2.0 * b.dot(x) + c).collect()
    }

    /// Value, gradient and Hessian of `t eps - sum ln(eps - f_i(x))` in `(x, eps)`.
    fn evaluate(&self, t: f64, x: &DVector<f64>, eps: f64) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = x.len();
        let mut value = t * eps;
        let mut grad = DVector::zeros(d + 1);
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        grad[d] = t;
        for (a, b, c) in &self.quad {
            let ax = a * x;
            let slack = eps - (ax.dot(x) + 2.0 * b.dot(x) + c);
            if !(slack > 0.0) {
                return None;
            }
            value -= slack.ln();
            // gradient of the constraint h = f - eps
            let mut gh = DVector::zeros(d + 1);
            gh.rows_mut(0, d).copy_from(&((&ax + b) * 2.0));
            gh[d] = -1.0;
            grad += &gh / slack;
            hess += &gh * gh.transpose() / (slack * slack);
            let mut block = hess.view_mut((0, 0), (d, d));
            block += a * (2.0 / slack);
        }
        Some((value, grad, hess))
    }
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    // Symmetric diagonal scaling keeps Cholesky usable when the barrier terms
    // span many orders of magnitude.
    let scale = h.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
    let hs = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * scale[i] * scale[j]);
    let gs = g.component_mul(&scale);
    let mut shift = 0.0;
    for _ in 0..12 {
        let m = &hs + DMatrix::identity(h.nrows(), h.ncols()) * shift;
        if let Some(ch) = m.cholesky() {
            return Some(-ch.solve(&gs).component_mul(&scale));
        }
        shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
    }
    None
}

/// Minimizes `max_i |p(lambda_i)|^2` subject to `p(1) = 1` over real
/// polynomials of degree `d`.
///
/// When the points can be annihilated exactly the interpolating polynomial is
/// returned. Otherwise a log-barrier method runs Newton steps on
/// `t eps - sum ln(eps - a^T Q_i a)`, increasing `t` until the duality gap
/// `m / t` is at most `tol * max(eps, 1)`.
pub fn design_filter(points: &SamplePoints, d: usize, opts: &DesignOptions) -> Result<Filter> {
    if d == 0 {
        return Err(Error::InvalidInput("filter degree must be at least 1".into()));
    }
    if points.is_empty() {
        return Err(Error::InvalidInput("no design points".into()));
    }
    if points.points.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidInput("design points must be finite".into()));
    }
    let reps = constraint_points(&points.points);
    let conditions: usize = reps.iter().map(|z| if z.im == 0.0 { 1 } else { 2 }).sum();
    if conditions <= d {
        if let Some(a) = interpolating_filter(&reps, d) {
            let eps = max_response(&a, &points.points);
            return Filter::with_epsilon(a, eps);
        }
    }

    let barrier = Barrier::new(&reps, d);
    let m = reps.len() as f64;
    let mut x = DVector::zeros(d);
    let start = barrier.responses(&x).into_iter().fold(0.0, f64::max);
    let mut eps = 1.1 * start + 1e-3;
    let mut t = m / eps.max(1e-3);
    let best = |x: &DVector<f64>| coefficients_of(x);
    let mut stalled = false;
    let mut first = true;
    while !stalled {
        let mut centered = false;
        for _ in 0..opts.max_newton {
            let (value, grad, hess) = barrier
                .evaluate(t, &x, eps)
                .ok_or_else(|| Error::SolverFailure { reason: "lost strict feasibility".into(), best: best(&x) })?;
            let step = solve_newton(&hess, &grad)
                .ok_or_else(|| Error::SolverFailure { reason: "singular Newton system".into(), best: best(&x) })?;
            let decrement = -grad.dot(&step);
            if !decrement.is_finite() {
                return Err(Error::SolverFailure { reason: "non-finite Newton step".into(), best: best(&x) });
            }
            if decrement / 2.0 <= 1e-10 {
                centered = true;
                break;
            }
            let mut alpha = 1.0;
            let accepted = loop {
                let cand_x = &x + step.rows(0, d) * alpha;
                let cand_eps = eps + step[d] * alpha;
                if let Some((v, _, _)) = barrier.evaluate(t, &cand_x, cand_eps) {
                    if v <= value - 0.25 * alpha * decrement {
                        x = cand_x;
                        eps = cand_eps;
                        break true;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break false;
                }
            };
            if !accepted {
                // Round-off now dominates the barrier; the iterate is as good as it gets.
                stalled = true;
                centered = true;
                break;
            }
        }
        if !centered {
            if first {
                return Err(Error::SolverFailure { reason: "centering did not converge".into(), best: best(&x) });
            }
            // Later centerings start from a near-optimal point; failing to
            // settle there is round-off, not divergence.
            stalled = true;
        }
        first = false;
        if m / t <= opts.tol * eps.max(1.0) {
            break;
        }
        t *= 2.0;
    }
    let a = coefficients_of(&x);
    let achieved = max_response(&a, &points.points);
    Filter::with_epsilon(a, achieved)
}

fn max_response(a: &[f64], points: &[Complex<f64>]) -> f64 {
    points
        .iter()
        .map(|&z| a.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c).norm_sqr())
        .fold(0.0, f64::max)
}

/// Roots at the `d` non-unit mean eigenvalues of largest modulus (ties go to
/// the larger real part), normalized to `p(1) = 1`.
pub fn mean_spectrum_filter(mean_eigs: &[f64], d: usize) -> Result<Filter> {
    if d == 0 {
        return Err(Error::InvalidInput("filter degree must be at least 1".into()));
    }
    let mut distinct: Vec<f64> = mean_eigs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
    let k = distinct.len();
    let mut others: Vec<f64> = distinct.into_iter().filter(|v| (v - 1.0).abs() > 1e-9).collect();
    if others.len() == k {
        return Err(Error::InvalidInput("mean eigenvalues must include 1".into()));
    }
    if d + 1 > k {
        return Err(Error::InfeasibleBaseline { degree: d, distinct: k });
    }
    others.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));
    let roots: Vec<Complex<f64>> = others[..d].iter().map(|&r| Complex::new(r, 0.0)).collect();
    let a = interpolating_filter(&roots, d).ok_or_else(|| Error::InvalidInput("root at 1".into()))?;
    let pts: Vec<Complex<f64>> = others.iter().map(|&r| Complex::new(r, 0.0)).collect();
    let eps = max_response(&a, &pts);
    Filter::with_epsilon(a, eps)
}

/// Design over the true non-consensus spectrum of a realization.
pub fn oracle_filter(spectrum: &SpectrumSample, d: usize, opts: &DesignOptions) -> Result<Filter> {
    design_filter(&SamplePoints::from_points(&spectrum.without_consensus(), "oracle"), d, opts)
}

/// `(1/d) ln max |p(lambda)|` over the non-consensus spectrum.
pub fn per_iteration_rate(filter: &Filter, spectrum: &SpectrumSample) -> f64 {
    convergence_factor(spectrum, Some(filter))
}
