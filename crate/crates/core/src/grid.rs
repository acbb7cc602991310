//! Rectangular grids over the complex plane and densities sampled on them.
//!
//! Grid nodes are cell centers: node `(i, j)` sits at `(t_i, s_j)` and owns
//! the cell `[t_i - dt/2, t_i + dt/2) x [s_j - ds/2, s_j + ds/2)`. Values are
//! stored row-major with `t` as the slow index.

use std::io::{BufRead, Write};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub n_s: usize,
}

fn axis_at(min: f64, max: f64, n: usize, k: usize) -> f64 {
    if k + 1 == n {
        max
    } else {
        min + (max - min) * k as f64 / (n - 1) as f64
    }
}

impl Plane {
    pub fn new(t_min: f64, t_max: f64, n_t: usize, s_min: f64, s_max: f64, n_s: usize) -> Result<Self> {
        let p = Self { t_min, t_max, n_t, s_min, s_max, n_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_min, self.t_max, self.s_min, self.s_max].iter().all(|v| v.is_finite());
        if !finite || self.t_max <= self.t_min || self.s_max <= self.s_min {
            return Err(Error::InvalidInput(format!("degenerate plane {self:?}")));
        }
        if self.n_t < 2 || self.n_s < 2 {
            return Err(Error::InvalidInput("a plane needs at least 2 nodes per axis".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n_t - 1) as f64
    }

    pub fn ds(&self) -> f64 {
        (self.s_max - self.s_min) / (self.n_s - 1) as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dt() * self.ds()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_at(&self, i: usize) -> f64 {
        axis_at(self.t_min, self.t_max, self.n_t, i)
    }

    pub fn s_at(&self, j: usize) -> f64 {
        axis_at(self.s_min, self.s_max, self.n_s, j)
    }

    pub fn point(&self, i: usize, j: usize) -> Complex<f64> {
        Complex::new(self.t_at(i), self.s_at(j))
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_s + j
    }

    /// Cell containing `z`, if any.
    pub fn cell_of(&self, z: Complex<f64>) -> Option<(usize, usize)> {
        let fi = ((z.re - self.t_min) / self.dt() + 0.5).floor();
        let fj = ((z.im - self.s_min) / self.ds() + 0.5).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.n_t as f64 || fj >= self.n_s as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// True when the imaginary axis is symmetric about zero, so node `j` and
    /// node `n_s - 1 - j` are mirror images.
    pub fn is_conjugate_symmetric(&self) -> bool {
        (self.s_min + self.s_max).abs() <= 1e-12 * self.s_max.abs().max(1.0)
    }

    /// Image under `z -> 1 + alpha (z - 1)` (real part) and `s -> alpha s`.
    pub fn image(&self, alpha: f64) -> Self {
        let map = |t: f64| 1.0 + alpha * (t - 1.0);
        Self { t_min: map(self.t_min), t_max: map(self.t_max), s_min: alpha * self.s_min, s_max: alpha * self.s_max, ..*self }
    }

    /// Plane whose image under [`Plane::image`] is `self`.
    pub fn preimage(&self, alpha: f64) -> Self {
        let map = |x: f64| (x - 1.0) / alpha + 1.0;
        Self { t_min: map(self.t_min), t_max: map(self.t_max), s_min: self.s_min / alpha, s_max: self.s_max / alpha, ..*self }
    }
}

/// Plane plus the `u`-integration settings of the density computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub n_s: usize,
    pub beta: f64,
    pub u_max: f64,
    pub n_u: usize,
}

impl GridSpec {
    pub const DEFAULT_BETA: f64 = 1e-6;
    pub const DEFAULT_U_MAX: f64 = 1e3;
    pub const DEFAULT_N_U: usize = 96;

    pub fn from_plane(plane: Plane) -> Self {
        Self {
            t_min: plane.t_min,
            t_max: plane.t_max,
            n_t: plane.n_t,
            s_min: plane.s_min,
            s_max: plane.s_max,
            n_s: plane.n_s,
            beta: Self::DEFAULT_BETA,
            u_max: Self::DEFAULT_U_MAX,
            n_u: Self::DEFAULT_N_U,
        }
    }

    pub fn plane(&self) -> Plane {
        Plane { t_min: self.t_min, t_max: self.t_max, n_t: self.n_t, s_min: self.s_min, s_max: self.s_max, n_s: self.n_s }
    }

    pub fn with_plane(self, plane: Plane) -> Self {
        Self { t_min: plane.t_min, t_max: plane.t_max, n_t: plane.n_t, s_min: plane.s_min, s_max: plane.s_max, n_s: plane.n_s, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.plane().validate()?;
        if !(self.beta > 0.0) || !(self.u_max > self.beta) || !self.u_max.is_finite() {
            return Err(Error::InvalidInput(format!("need 0 < beta < u_max, got beta={} u_max={}", self.beta, self.u_max)));
        }
        if self.n_u < 16 {
            return Err(Error::InvalidInput(format!("n_u must be at least 16, got {}", self.n_u)));
        }
        Ok(())
    }
}

/// Nonnegative (after clipping) density values over a [`Plane`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    plane: Plane,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(plane: Plane, values: Vec<f64>) -> Result<Self> {
        plane.validate()?;
        if values.len() != plane.len() {
            return Err(Error::InvalidInput(format!("{} values for a {}-node plane", values.len(), plane.len())));
        }
        Ok(Self { plane, values })
    }

    pub fn zeros(plane: Plane) -> Self {
        Self { values: vec![0.0; plane.len()], plane }
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.plane.index(i, j)]
    }

    pub fn cell_area(&self) -> f64 {
        self.plane.cell_area()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// Mass over cells whose center satisfies `keep`.
    pub fn mass_where(&self, keep: impl Fn(Complex<f64>) -> bool) -> f64 {
        let mut total = 0.0;
        for i in 0..self.plane.n_t {
            for j in 0..self.plane.n_s {
                if keep(self.plane.point(i, j)) {
                    total += self.get(i, j);
                }
            }
        }
        total * self.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum |f - g| * cell_area` over cells whose center satisfies `keep`.
    pub fn l1_distance(&self, other: &DensityGrid, keep: impl Fn(Complex<f64>) -> bool) -> Result<f64> {
        if !planes_match(&self.plane, &other.plane) {
            return Err(Error::InvalidInput("density grids live on different planes".into()));
        }
        let mut total = 0.0;
        for i in 0..self.plane.n_t {
            for j in 0..self.plane.n_s {
                if keep(self.plane.point(i, j)) {
                    total += (self.get(i, j) - other.get(i, j)).abs();
                }
            }
        }
        Ok(total * self.cell_area())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,s,density")?;
        for i in 0..self.plane.n_t {
            let t = self.plane.t_at(i);
            for j in 0..self.plane.n_s {
                writeln!(w, "{},{},{}", t, self.plane.s_at(j), self.get(i, j))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty density file".into()))??;
        if header.trim() != "t,s,density" {
            return Err(Error::Parse(format!("unexpected density header {header:?}")));
        }
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{line:?}: {e}"))))
                .collect::<Result<_>>()?;
            if fields.len() != 3 {
                return Err(Error::Parse(format!("expected 3 fields in {line:?}")));
            }
            rows.push([fields[0], fields[1], fields[2]]);
        }
        let first_t = rows.first().ok_or_else(|| Error::Parse("density file has no rows".into()))?[0];
        let n_s = rows.iter().take_while(|r| r[0] == first_t).count();
        if n_s == 0 || rows.len() % n_s != 0 {
            return Err(Error::Parse("density rows do not form a rectangle".into()));
        }
        let n_t = rows.len() / n_s;
        let plane = Plane::new(first_t, rows[rows.len() - 1][0], n_t, rows[0][1], rows[n_s - 1][1], n_s)?;
        Self::new(plane, rows.iter().map(|r| r[2]).collect())
    }
}

pub fn planes_match(a: &Plane, b: &Plane) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
    a.n_t == b.n_t
        && a.n_s == b.n_s
        && close(a.t_min, b.t_min)
        && close(a.t_max, b.t_max)
        && close(a.s_min, b.s_min)
        && close(a.s_max, b.s_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_endpoints_are_exact() {
        let p = Plane::new(-0.6, 1.2, 101, -0.6, 0.6, 101).unwrap();
        assert_eq!(p.t_at(0), -0.6);
        assert_eq!(p.t_at(100), 1.2);
        assert!((p.dt() - 0.018).abs() < 1e-15);
        assert!(p.is_conjugate_symmetric());
        assert_eq!(p.cell_of(Complex::new(1.2 + 0.0089, 0.0)), Some((100, 50)));
        assert_eq!(p.cell_of(Complex::new(1.2 + 0.0091, 0.0)), None);
    }

    #[test]
    fn preimage_inverts_image() {
        let p = Plane::new(-0.6, 1.2, 11, -0.6, 0.6, 7).unwrap();
        let back = p.preimage(0.5).image(0.5);
        assert!(planes_match(&p, &back));
    }

    #[test]
    fn spec_validation() {
        let mut g = GridSpec::from_plane(Plane::new(-1.0, 1.0, 5, -1.0, 1.0, 5).unwrap());
        assert!(g.validate().is_ok());
        g.n_u = 8;
        assert!(g.validate().is_err());
        g.n_u = 16;
        g.beta = 0.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let plane = Plane::new(-0.6, 1.2, 4, -0.3, 0.3, 3).unwrap();
        let values: Vec<f64> = (0..12).map(|k| (k as f64).sqrt() / 7.0).collect();
        let grid = DensityGrid::new(plane, values).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,s,density\n-0.6,-0.3,0\n"));
        assert_eq!(DensityGrid::read_csv(&buf[..]).unwrap(), grid);
    }

    #[test]
    fn l1_and_masks() {
        let plane = Plane::new(0.0, 1.0, 2, 0.0, 1.0, 2).unwrap();
        let a = DensityGrid::new(plane, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DensityGrid::zeros(plane);
        assert_eq!(a.mass(), 10.0);
        assert_eq!(a.l1_distance(&b, |_| true).unwrap(), 10.0);
        assert_eq!(a.l1_distance(&b, |z| z.re < 0.5).unwrap(), 3.0);
        assert_eq!(a.mass_where(|z| z.im > 0.5), 6.0);
    }
}
