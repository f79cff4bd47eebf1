//! Uniform grids on the truncated box `[-L, L]^dim`, node fields, and quadrature.
//!
//! Nodes are indexed lexicographically with the first axis outermost: in 2D
//! node `(ix, iy)` has flat index `ix * M + iy`. All quadrature is the
//! node-based midpoint rule (each node carries weight `h^dim`), and every
//! reduction goes through [`Compensated`] summation so quotients of integrals
//! are reproducible to round-off.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Relative slack used for closed-ball and closed-cube membership tests.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Compensated sum of an iterator of reals.
pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = Compensated::new();
    for x in iter {
        acc.add(x);
    }
    acc.value()
}

/// Uniform tensor grid on `[-L, L]^dim` with `M` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    half_length: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_length: f64, points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("dim must be 1 or 2, got {dim}")));
        }
        if points_per_axis < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 points per axis, got {points_per_axis}"
            )));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidArgument(format!("half length must be positive, got {half_length}")));
        }
        Ok(Self { dim, half_length, points: points_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / (self.points - 1) as f64
    }

    /// Quadrature weight of one node, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn node_count(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    /// Coordinate of axis index `i`.
    #[inline]
    pub fn axis_coord(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.half_length
        } else {
            -self.half_length + i as f64 * self.spacing()
        }
    }

    /// Nearest axis index for a coordinate (clamped into the grid).
    pub fn axis_index(&self, x: f64) -> usize {
        let s = ((x + self.half_length) / self.spacing()).round();
        s.clamp(0.0, (self.points - 1) as f64) as usize
    }

    /// Per-axis indices of flat node `k` (unused axes are 0).
    #[inline]
    pub fn multi_index(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k / self.points, k % self.points]
        }
    }

    #[inline]
    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.points + idx[1]
        }
    }

    /// Coordinates of flat node `k`; the unused second entry is 0 in 1D.
    #[inline]
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(k);
        if self.dim == 1 {
            [self.axis_coord(i), 0.0]
        } else {
            [self.axis_coord(i), self.axis_coord(j)]
        }
    }

    /// True for nodes on the box boundary.
    #[inline]
    pub fn is_boundary(&self, k: usize) -> bool {
        let [i, j] = self.multi_index(k);
        let last = self.points - 1;
        let edge = |a: usize| a == 0 || a == last;
        if self.dim == 1 {
            edge(i)
        } else {
            edge(i) || edge(j)
        }
    }

    /// Distance (in index units) from node `k` to the nearest box face.
    pub fn boundary_distance(&self, k: usize) -> usize {
        let [i, j] = self.multi_index(k);
        let last = self.points - 1;
        let d = |a: usize| a.min(last - a);
        if self.dim == 1 {
            d(i)
        } else {
            d(i).min(d(j))
        }
    }

    fn check_point(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, grid has dim {}",
                x0.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Squared Euclidean distance between node `k` and `x0`.
    #[inline]
    pub fn dist2(&self, k: usize, x0: &[f64]) -> f64 {
        let c = self.coords(k);
        (0..self.dim).map(|a| (c[a] - x0[a]).powi(2)).sum()
    }

    /// Sup-norm distance between node `k` and `x0`.
    #[inline]
    pub fn dist_inf(&self, k: usize, x0: &[f64]) -> f64 {
        let c = self.coords(k);
        (0..self.dim).map(|a| (c[a] - x0[a]).abs()).fold(0.0, f64::max)
    }

    /// Node mask of the closed ball `B_r(x0)`.
    pub fn ball_mask(&self, x0: &[f64], r: f64) -> Result<Vec<bool>> {
        self.check_point(x0)?;
        let lim = r * r * (1.0 + MEMBERSHIP_SLACK);
        Ok((0..self.node_count()).map(|k| self.dist2(k, x0) <= lim).collect())
    }

    /// Node mask of the closed cube `Q_r(x0)` (side `2r`).
    pub fn cube_mask(&self, x0: &[f64], r: f64) -> Result<Vec<bool>> {
        self.check_point(x0)?;
        let lim = r * (1.0 + MEMBERSHIP_SLACK);
        Ok((0..self.node_count()).map(|k| self.dist_inf(k, x0) <= lim).collect())
    }

    /// True when the closed cube `Q_r(x0)` lies inside the box.
    pub fn contains_cube(&self, x0: &[f64], r: f64) -> bool {
        let lim = self.half_length * (1.0 + MEMBERSHIP_SLACK);
        x0.iter().all(|&c| c - r >= -lim && c + r <= lim)
    }
}

/// Real values on every node of a grid, optionally tagged with a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    time: Option<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values, time: None })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.node_count()], time: None }
    }

    /// Samples `f` at node coordinates (`x.len() == dim`).
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let values = (0..grid.node_count())
            .map(|k| {
                let c = grid.coords(k);
                f(&c[..dim])
            })
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>, time: Option<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values, time }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `c * self`, keeping the time tag.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|v| c * v).collect(), self.time)
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(Self::from_raw(self.grid, values, self.time))
    }

    /// Pointwise product.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Self::from_raw(self.grid, values, self.time))
    }

    /// Discrete `L^2` inner product `h^dim * sum f g`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(inner_raw(&self.values, &other.values, self.grid.cell_volume()))
    }

    pub fn norm_sq(&self) -> f64 {
        inner_raw(&self.values, &self.values, self.grid.cell_volume())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Midpoint-rule integral of `f^power` over the whole box.
    pub fn integrate(&self, power: u32) -> f64 {
        self.grid.cell_volume() * csum(self.values.iter().map(|v| v.powi(power as i32)))
    }

    /// Midpoint-rule integral of `f^power` over the nodes flagged in `mask`.
    pub fn integrate_masked(&self, mask: &[bool], power: u32) -> f64 {
        debug_assert_eq!(mask.len(), self.values.len());
        self.grid.cell_volume()
            * csum(
                self.values
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(v, _)| v.powi(power as i32)),
            )
    }

    /// Midpoint-rule integral of `f^power` over the closed ball `B_r(x0)`.
    pub fn integrate_ball(&self, x0: &[f64], r: f64, power: u32) -> Result<f64> {
        check_radius(r)?;
        let mask = self.grid.ball_mask(x0, r)?;
        self.integrate_region(&mask, x0, r, power)
    }

    /// Midpoint-rule integral of `f^power` over the closed cube `Q_r(x0)`.
    pub fn integrate_cube(&self, x0: &[f64], r: f64, power: u32) -> Result<f64> {
        check_radius(r)?;
        let mask = self.grid.cube_mask(x0, r)?;
        self.integrate_region(&mask, x0, r, power)
    }

    fn integrate_region(&self, mask: &[bool], x0: &[f64], r: f64, power: u32) -> Result<f64> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::BallOutsideDomain { center: x0.to_vec(), radius: r });
        }
        Ok(self.integrate_masked(mask, power))
    }

    /// CSV with header `x[,y],value`, one row per node in flat index order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(if self.grid.dim() == 1 { "x,value\n" } else { "x,y,value\n" });
        for (k, v) in self.values.iter().enumerate() {
            let c = self.grid.coords(k);
            if self.grid.dim() == 1 {
                let _ = writeln!(out, "{},{}", c[0], v);
            } else {
                let _ = writeln!(out, "{},{},{}", c[0], c[1], v);
            }
        }
        out
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

pub(crate) fn inner_raw(a: &[f64], b: &[f64], weight: f64) -> f64 {
    weight * csum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// `|grad f|^2` at every node: central differences inside, one-sided on the
/// box faces.
pub fn grad_norm_sq(f: &ScalarField) -> ScalarField {
    let grid = *f.grid();
    let h = grid.spacing();
    let m = grid.points_per_axis();
    let v = f.values();
    let deriv = |k: usize, axis: usize| -> f64 {
        let idx = grid.multi_index(k);
        let i = idx[axis];
        let at = |ii: usize| {
            let mut j = idx;
            j[axis] = ii;
            v[grid.flat_index(j)]
        };
        if i == 0 {
            (at(1) - at(0)) / h
        } else if i == m - 1 {
            (at(m - 1) - at(m - 2)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        }
    };
    let values = (0..grid.node_count())
        .map(|k| (0..grid.dim()).map(|a| deriv(k, a).powi(2)).sum())
        .collect();
    ScalarField::from_raw(grid, values, f.time())
}
