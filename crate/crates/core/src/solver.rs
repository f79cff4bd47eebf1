//! θ-scheme time stepping for `∂t φ = Δφ − aφ (+ f)` on the box with zero
//! Dirichlet data.
//!
//! Each step solves
//!
//! ```text
//! (I − θ dt A_n) φ^{n+1} = (I + (1−θ) dt A_n) φ^n + dt f_n,    A_n = Δ_h − a(·, t_n + dt/2)
//! ```
//!
//! with a tridiagonal elimination in 1D and Jacobi-preconditioned CG on the
//! 5-point stencil in 2D. Both matrices are symmetric, so the adjoint of a
//! step is the same step: [`solve_adjoint`] runs the forward stepper over the
//! reversed list of step midpoints, which makes the discrete duality identity
//!
//! ```text
//! <y^K, φ^K> − <y^0, φ^0> = Σ_n dt <f_n, θ φ^n + (1−θ) φ^{n+1}>
//! ```
//!
//! hold to linear-solver tolerance.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{csum, inner_raw, Compensated, Grid, ScalarField};
use crate::potential::Potential;
use crate::timeset::{step_midpoint, TimeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Implicitness weight; 0.5 is Crank–Nicolson.
    pub theta: f64,
    /// Step size; overwritten by `T / K` in the trajectory solvers.
    pub dt: f64,
    pub linear_solver_tol: f64,
    pub max_linear_iters: usize,
    /// Largest tolerated fraction of `||φ(t)||²` within `3h` of the box
    /// faces. `None` disables the truncation guard.
    pub boundary_mass_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            dt: 1e-2,
            linear_solver_tol: 1e-12,
            max_linear_iters: 5000,
            boundary_mass_tol: Some(1e-6),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!("theta must lie in [0,1], got {}", self.theta)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.linear_solver_tol > 0.0) {
            return Err(Error::InvalidArgument("linear solver tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn without_boundary_guard(mut self) -> Self {
        self.boundary_mass_tol = None;
        self
    }
}

/// Uniformly sampled solution `φ(t_0), …, φ(t_K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    times: Vec<f64>,
    fields: Vec<ScalarField>,
    potential_norm: f64,
}

impl Trajectory {
    /// Builds a trajectory from fields on `times`, checking uniformity.
    pub fn new(grid: Grid, times: Vec<f64>, fields: Vec<ScalarField>, potential_norm: f64) -> Result<Self> {
        if times.len() < 2 || times.len() != fields.len() {
            return Err(Error::InvalidArgument("trajectory needs K >= 1 and one field per time".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for (k, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.abs().max(times[k].abs()) * 4.0 {
                return Err(Error::InvalidArgument(format!("times are not uniform at index {k}")));
            }
        }
        let mut tagged = Vec::with_capacity(fields.len());
        for (f, &t) in fields.into_iter().zip(&times) {
            if *f.grid() != grid {
                return Err(Error::GridMismatch);
            }
            tagged.push(f.with_time(t));
        }
        Ok(Self { grid, times, fields: tagged, potential_norm })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        (self.final_time() - self.times[0]) / self.steps() as f64
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn initial(&self) -> &ScalarField {
        &self.fields[0]
    }

    pub fn terminal(&self) -> &ScalarField {
        &self.fields[self.fields.len() - 1]
    }

    /// `||a||_inf` of the potential that produced the trajectory (0 if unknown).
    pub fn potential_norm(&self) -> f64 {
        self.potential_norm
    }

    pub fn with_potential_norm(mut self, norm: f64) -> Self {
        self.potential_norm = norm;
        self
    }

    /// Every field multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            times: self.times.clone(),
            fields: self.fields.iter().map(|f| f.scaled(c)).collect(),
            potential_norm: self.potential_norm,
        }
    }

    /// Pointwise product of every field with a fixed weight (e.g. a cutoff).
    pub fn multiplied(&self, weight: &ScalarField) -> Result<Self> {
        let fields = self.fields.iter().map(|f| f.multiply(weight)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: self.grid, times: self.times.clone(), fields, potential_norm: self.potential_norm })
    }

    /// `s ↦ φ(T − s)`, re-indexed on the same time grid.
    pub fn reversed(&self) -> Self {
        let fields = self
            .fields
            .iter()
            .rev()
            .zip(&self.times)
            .map(|(f, &t)| f.clone().with_time(t))
            .collect();
        Self { grid: self.grid, times: self.times.clone(), fields, potential_norm: self.potential_norm }
    }

    /// CSV with header `t,x[,y],value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(if self.grid.dim() == 1 { "t,x,value\n" } else { "t,x,y,value\n" });
        for (f, t) in self.fields.iter().zip(&self.times) {
            for (k, v) in f.values().iter().enumerate() {
                let c = self.grid.coords(k);
                if self.grid.dim() == 1 {
                    let _ = writeln!(out, "{t},{},{v}", c[0]);
                } else {
                    let _ = writeln!(out, "{t},{},{},{v}", c[0], c[1]);
                }
            }
        }
        out
    }

    /// Binary cache: `OBSL1`, then little-endian `u64 dim, u64 M, u64 K,
    /// f64 L, f64 T`, then the `(K+1)·M^dim` values in time-major order.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.grid.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.points_per_axis() as u64).to_le_bytes())?;
        w.write_all(&(self.steps() as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_length().to_le_bytes())?;
        w.write_all(&self.final_time().to_le_bytes())?;
        for f in &self.fields {
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a cache written by [`Trajectory::write_cache`]. The start time is
    /// 0 and the potential norm is not stored, so it reads back as 0.
    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Parse("missing OBSL1 magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let k = u64::from_le_bytes(next(&mut r)?) as usize;
        let l = f64::from_le_bytes(next(&mut r)?);
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let grid = Grid::new(dim, l, m)?;
        if k == 0 {
            return Err(Error::Parse("cache has K = 0".into()));
        }
        let n = grid.node_count();
        let mut fields = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(f64::from_le_bytes(next(&mut r)?));
            }
            fields.push(ScalarField::new(grid, vals)?);
        }
        Self::new(grid, uniform_times(horizon, k), fields, 0.0)
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(f))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(f))
    }
}

const CACHE_MAGIC: &[u8; 5] = b"OBSL1";

pub(crate) fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect()
}

/// Piecewise-constant control: one field per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    grid: Grid,
    steps: Vec<Vec<f64>>,
}

impl StepControl {
    pub fn zeros(grid: Grid, steps: usize) -> Self {
        Self { grid, steps: vec![vec![0.0; grid.node_count()]; steps] }
    }

    pub fn new(grid: Grid, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.iter().any(|s| s.len() != grid.node_count()) {
            return Err(Error::InvalidArgument("control step has wrong length".into()));
        }
        if steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control has non-finite values".into()));
        }
        Ok(Self { grid, steps })
    }

    /// Averages neighbouring samples of a `K+1`-sample trajectory.
    pub fn from_samples(samples: &Trajectory) -> Self {
        let steps = samples
            .fields()
            .windows(2)
            .map(|w| w[0].values().iter().zip(w[1].values()).map(|(a, b)| 0.5 * (a + b)).collect())
            .collect();
        Self { grid: *samples.grid(), steps }
    }

    /// Constant-in-time control equal to `field` on every step.
    pub fn constant(field: &ScalarField, steps: usize) -> Self {
        Self { grid: *field.grid(), steps: vec![field.values().to_vec(); steps] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.steps[n]
    }

    /// `dt · h^dim · Σ u²`.
    pub fn norm_sq(&self, dt: f64) -> f64 {
        dt * self.grid.cell_volume() * csum(self.steps.iter().flatten().map(|v| v * v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid, steps: self.steps.iter().map(|s| s.iter().map(|v| c * v).collect()).collect() }
    }

    /// CSV with header `t,x[,y],value`; `t` is the step midpoint.
    pub fn to_csv(&self, horizon: f64) -> String {
        let k = self.steps.len();
        let mut out = String::new();
        out.push_str(if self.grid.dim() == 1 { "t,x,value\n" } else { "t,x,y,value\n" });
        for (n, s) in self.steps.iter().enumerate() {
            let t = step_midpoint(horizon, k, n);
            for (i, v) in s.iter().enumerate() {
                let c = self.grid.coords(i);
                if self.grid.dim() == 1 {
                    let _ = writeln!(out, "{t},{},{v}", c[0]);
                } else {
                    let _ = writeln!(out, "{t},{},{},{v}", c[0], c[1]);
                }
            }
        }
        out
    }
}

/// Checked potential samples at every step midpoint.
#[derive(Debug, Clone)]
pub(crate) struct PotentialTable {
    rows: Vec<Vec<f64>>,
    constant: bool,
}

impl PotentialTable {
    pub(crate) fn new(potential: &Potential, grid: &Grid, horizon: f64, steps: usize) -> Result<Self> {
        if potential.is_time_independent() {
            let row = potential.sample_grid(grid, 0.0)?;
            return Ok(Self { rows: vec![row], constant: true });
        }
        let rows = (0..steps)
            .map(|n| potential.sample_grid(grid, step_midpoint(horizon, steps, n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, constant: false })
    }

    fn row(&self, n: usize) -> &[f64] {
        if self.constant {
            &self.rows[0]
        } else {
            &self.rows[n]
        }
    }
}

/// One θ-step with a prepared potential row.
struct Stepper {
    grid: Grid,
    cfg: SolverConfig,
    // 1D scratch
    diag: Vec<f64>,
    cprime: Vec<f64>,
    // 2D scratch
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl Stepper {
    fn new(grid: Grid, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let n = grid.node_count();
        Ok(Self {
            grid,
            cfg,
            diag: vec![0.0; n],
            cprime: vec![0.0; n],
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        })
    }

    fn check_potential(&self, a: &[f64]) -> Result<()> {
        let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
        if 1.0 + self.cfg.theta * self.cfg.dt * amin <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "time step {} too large for potential minimum {amin}: implicit matrix is not positive definite",
                self.cfg.dt
            )));
        }
        Ok(())
    }

    /// `u ↦ (I − θ dt A)^{-1} [(I + (1−θ) dt A) u + dt f]` with boundary values held at 0.
    fn advance(&mut self, u: &[f64], a: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_potential(a)?;
        let rhs = self.explicit_part(u, a, source);
        if self.grid.dim() == 1 {
            Ok(self.solve_tridiagonal(&rhs, a))
        } else {
            self.solve_pcg(&rhs, a, u)
        }
    }

    fn explicit_part(&self, u: &[f64], a: &[f64], source: Option<&[f64]>) -> Vec<f64> {
        let g = &self.grid;
        let h2 = g.spacing() * g.spacing();
        let w = (1.0 - self.cfg.theta) * self.cfg.dt;
        let dt = self.cfg.dt;
        let m = g.points_per_axis();
        let mut out = vec![0.0; u.len()];
        for k in 0..u.len() {
            if g.is_boundary(k) {
                continue;
            }
            let lap = if g.dim() == 1 {
                (u[k - 1] - 2.0 * u[k] + u[k + 1]) / h2
            } else {
                (u[k - m] + u[k + m] + u[k - 1] + u[k + 1] - 4.0 * u[k]) / h2
            };
            let mut v = u[k];
            if w != 0.0 {
                v += w * (lap - a[k] * u[k]);
            }
            if let Some(f) = source {
                v += dt * f[k];
            }
            out[k] = v;
        }
        out
    }

    fn solve_tridiagonal(&mut self, rhs: &[f64], a: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let h2 = self.grid.spacing().powi(2);
        let w = self.cfg.theta * self.cfg.dt;
        let off = -w / h2;
        let mut x = vec![0.0; n];
        if w == 0.0 {
            x[1..n - 1].copy_from_slice(&rhs[1..n - 1]);
            return x;
        }
        // Thomas on interior nodes 1..n-1
        let diag = &mut self.diag;
        let cp = &mut self.cprime;
        for i in 1..n - 1 {
            diag[i] = 1.0 + w * (2.0 / h2 + a[i]);
        }
        let mut d = vec![0.0; n];
        cp[1] = off / diag[1];
        d[1] = rhs[1] / diag[1];
        for i in 2..n - 1 {
            let denom = diag[i] - off * cp[i - 1];
            cp[i] = off / denom;
            d[i] = (rhs[i] - off * d[i - 1]) / denom;
        }
        x[n - 2] = d[n - 2];
        for i in (1..n - 2).rev() {
            x[i] = d[i] - cp[i] * x[i + 1];
        }
        x
    }

    fn apply_implicit(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let m = g.points_per_axis();
        let h2 = g.spacing().powi(2);
        let w = self.cfg.theta * self.cfg.dt;
        for k in 0..x.len() {
            if g.is_boundary(k) {
                out[k] = 0.0;
                continue;
            }
            let nb = |j: usize| if g.is_boundary(j) { 0.0 } else { x[j] };
            let lap = (nb(k - m) + nb(k + m) + nb(k - 1) + nb(k + 1) - 4.0 * x[k]) / h2;
            out[k] = x[k] - w * (lap - a[k] * x[k]);
        }
    }

    fn solve_pcg(&mut self, rhs: &[f64], a: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        let g = self.grid;
        let n = rhs.len();
        let h2 = g.spacing().powi(2);
        let w = self.cfg.theta * self.cfg.dt;
        let mut x: Vec<f64> = (0..n).map(|k| if g.is_boundary(k) { 0.0 } else { guess[k] }).collect();
        if w == 0.0 {
            return Ok(rhs.to_vec());
        }
        let rhs_norm = csum(rhs.iter().map(|v| v * v)).sqrt();
        if rhs_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let inv_diag: Vec<f64> =
            (0..n).map(|k| if g.is_boundary(k) { 0.0 } else { 1.0 / (1.0 + w * (4.0 / h2 + a[k])) }).collect();
        let Self { r, z, p, q, .. } = self;
        self_apply(&g, &self.cfg, &x, a, q);
        for k in 0..n {
            r[k] = rhs[k] - q[k];
            z[k] = inv_diag[k] * r[k];
            p[k] = z[k];
        }
        let mut rz = dot(r, z);
        let tol = self.cfg.linear_solver_tol * rhs_norm;
        let mut res = dot(r, r).sqrt();
        let mut iters = 0;
        while res > tol {
            if iters >= self.cfg.max_linear_iters {
                return Err(Error::LinearSolveDiverged { iters, residual: res / rhs_norm });
            }
            self_apply(&g, &self.cfg, p, a, q);
            let alpha = rz / dot(p, q);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * q[k];
                z[k] = inv_diag[k] * r[k];
            }
            let rz_new = dot(r, z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            res = dot(r, r).sqrt();
            iters += 1;
        }
        Ok(x)
    }
}

fn self_apply(g: &Grid, cfg: &SolverConfig, x: &[f64], a: &[f64], out: &mut [f64]) {
    let tmp = Stepper { grid: *g, cfg: *cfg, diag: vec![], cprime: vec![], r: vec![], z: vec![], p: vec![], q: vec![] };
    tmp.apply_implicit(x, a, out);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = Compensated::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

fn check_boundary(f: &ScalarField) -> Result<()> {
    let g = f.grid();
    let field_max = f.max_abs();
    let boundary_max =
        (0..g.node_count()).filter(|&k| g.is_boundary(k)).map(|k| f.values()[k].abs()).fold(0.0, f64::max);
    if boundary_max > 1e-8 * field_max {
        return Err(Error::BoundaryNotZero { boundary_max, field_max });
    }
    Ok(())
}

fn check_boundary_mass(grid: &Grid, values: &[f64], t: f64, tol: Option<f64>) -> Result<()> {
    let Some(tol) = tol else { return Ok(()) };
    let total = csum(values.iter().map(|v| v * v));
    if total == 0.0 {
        return Ok(());
    }
    let near = csum((0..values.len()).filter(|&k| grid.boundary_distance(k) <= 3).map(|k| values[k] * values[k]));
    let fraction = near / total;
    if fraction > tol {
        return Err(Error::MassAtBoundary { t, fraction });
    }
    Ok(())
}

fn check_horizon(horizon: f64, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need K >= 1 steps".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Marches `start` through the steps listed in `order` (indices into the
/// forward step list). Returns the `order.len() + 1` states in marching order.
pub(crate) fn march<F>(
    grid: &Grid,
    cfg: &SolverConfig,
    table: &PotentialTable,
    start: &[f64],
    order: &[usize],
    horizon: f64,
    forward: bool,
    mut source: F,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(usize) -> Option<Vec<f64>>,
{
    let mut stepper = Stepper::new(*grid, *cfg)?;
    let steps = order.len();
    let mut states = Vec::with_capacity(steps + 1);
    let time_of = |j: usize| {
        let k = if forward { j } else { steps - j };
        horizon * k as f64 / steps as f64
    };
    check_boundary_mass(grid, start, time_of(0), cfg.boundary_mass_tol)?;
    states.push(start.to_vec());
    for (j, &n) in order.iter().enumerate() {
        let src = source(n);
        let next = stepper.advance(&states[j], table.row(n), src.as_deref())?;
        check_boundary_mass(grid, &next, time_of(j + 1), cfg.boundary_mass_tol)?;
        states.push(next);
    }
    Ok(states)
}

fn into_trajectory(grid: Grid, horizon: f64, states: Vec<Vec<f64>>, norm: f64) -> Trajectory {
    let steps = states.len() - 1;
    let times = uniform_times(horizon, steps);
    let fields = states.into_iter().zip(&times).map(|(v, &t)| ScalarField::from_raw(grid, v, Some(t))).collect();
    Trajectory { grid, times, fields, potential_norm: norm }
}

/// A single step from time `t` with the potential sampled at `t + dt/2`.
pub fn step(f: &ScalarField, a: &Potential, t: f64, cfg: &SolverConfig) -> Result<ScalarField> {
    check_boundary(f)?;
    let grid = *f.grid();
    let row = a.sample_grid(&grid, t + 0.5 * cfg.dt)?;
    let mut stepper = Stepper::new(grid, *cfg)?;
    let next = stepper.advance(f.values(), &row, None)?;
    Ok(ScalarField::from_raw(grid, next, Some(t + cfg.dt)))
}

/// `φ` on `[0, T]` with `K` steps of size `T/K`.
pub fn solve(phi0: &ScalarField, a: &Potential, horizon: f64, steps: usize, cfg: &SolverConfig) -> Result<Trajectory> {
    solve_forced(phi0, a, horizon, steps, cfg, |_, _| {})
}

/// Like [`solve`] with an additional source `f(·, t)` sampled at the step
/// midpoints. The closure fills the node values of `f` at time `t`.
pub fn solve_forced<F>(
    phi0: &ScalarField,
    a: &Potential,
    horizon: f64,
    steps: usize,
    cfg: &SolverConfig,
    forcing: F,
) -> Result<Trajectory>
where
    F: Fn(f64, &mut [f64]),
{
    check_horizon(horizon, steps)?;
    check_boundary(phi0)?;
    let grid = *phi0.grid();
    let cfg = cfg.with_dt(horizon / steps as f64);
    let table = PotentialTable::new(a, &grid, horizon, steps)?;
    let order: Vec<usize> = (0..steps).collect();
    let mut buf = vec![0.0; grid.node_count()];
    let states = march(&grid, &cfg, &table, phi0.values(), &order, horizon, true, |n| {
        buf.iter_mut().for_each(|v| *v = 0.0);
        forcing(step_midpoint(horizon, steps, n), &mut buf);
        buf.iter().any(|&v| v != 0.0).then(|| buf.clone())
    })?;
    Ok(into_trajectory(grid, horizon, states, a.sup_norm()))
}

/// Controlled problem `∂t y − Δy + b y = χ_ω χ_E u`.
///
/// The source on step `n` is `u_n` restricted to `mask`, switched on when the
/// step midpoint lies in `E`.
pub fn solve_controlled(
    y0: &ScalarField,
    b: &Potential,
    control: &StepControl,
    mask: &[bool],
    e: &TimeSet,
    horizon: f64,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    check_horizon(horizon, steps)?;
    check_boundary(y0)?;
    let grid = *y0.grid();
    if *control.grid() != grid || mask.len() != grid.node_count() {
        return Err(Error::GridMismatch);
    }
    if control.step_count() != steps {
        return Err(Error::InvalidArgument(format!(
            "control has {} steps, expected {steps}",
            control.step_count()
        )));
    }
    let cfg = cfg.with_dt(horizon / steps as f64);
    let table = PotentialTable::new(b, &grid, horizon, steps)?;
    let gates = e.step_gates(horizon, steps);
    let states = march_controlled(&grid, &cfg, &table, y0.values(), control, mask, &gates, horizon)?;
    Ok(into_trajectory(grid, horizon, states, b.sup_norm()))
}

pub(crate) fn march_controlled(
    grid: &Grid,
    cfg: &SolverConfig,
    table: &PotentialTable,
    y0: &[f64],
    control: &StepControl,
    mask: &[bool],
    gates: &[bool],
    horizon: f64,
) -> Result<Vec<Vec<f64>>> {
    let steps = gates.len();
    let order: Vec<usize> = (0..steps).collect();
    march(grid, cfg, table, y0, &order, horizon, true, |n| {
        gates[n].then(|| control.step(n).iter().zip(mask).map(|(&u, &m)| if m { u } else { 0.0 }).collect())
    })
}

/// Backward problem from terminal data `φ_T`, returned in forward time
/// (`fields[K] == φ_T`). Uses exactly the forward step matrices in reverse
/// order.
pub fn solve_adjoint(
    phi_t: &ScalarField,
    a: &Potential,
    horizon: f64,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    check_horizon(horizon, steps)?;
    check_boundary(phi_t)?;
    let grid = *phi_t.grid();
    let cfg = cfg.with_dt(horizon / steps as f64);
    let table = PotentialTable::new(a, &grid, horizon, steps)?;
    let states = march_adjoint(&grid, &cfg, &table, phi_t.values(), steps, horizon)?;
    Ok(into_trajectory(grid, horizon, states, a.sup_norm()))
}

/// Adjoint states in forward-time order.
pub(crate) fn march_adjoint(
    grid: &Grid,
    cfg: &SolverConfig,
    table: &PotentialTable,
    phi_t: &[f64],
    steps: usize,
    horizon: f64,
) -> Result<Vec<Vec<f64>>> {
    let order: Vec<usize> = (0..steps).rev().collect();
    let mut states = march(grid, cfg, table, phi_t, &order, horizon, false, |_| None)?;
    states.reverse();
    Ok(states)
}

/// Adjoint step value `θ φ^n + (1−θ) φ^{n+1}`, the field that pairs with the
/// source of forward step `n`.
pub(crate) fn adjoint_step_value(states: &[Vec<f64>], n: usize, theta: f64) -> Vec<f64> {
    states[n].iter().zip(&states[n + 1]).map(|(a, b)| theta * a + (1.0 - theta) * b).collect()
}

/// `Σ_n dt <χ_E χ_ω u_n, θ φ^n + (1−θ) φ^{n+1}>` for an adjoint trajectory `φ`.
pub fn source_pairing(
    control: &StepControl,
    mask: &[bool],
    e: &TimeSet,
    adjoint: &Trajectory,
    theta: f64,
) -> Result<f64> {
    let steps = adjoint.steps();
    if control.step_count() != steps || *control.grid() != *adjoint.grid() {
        return Err(Error::GridMismatch);
    }
    let gates = e.step_gates(adjoint.final_time(), steps);
    let grid = adjoint.grid();
    let dt = adjoint.dt();
    let states: Vec<&[f64]> = adjoint.fields().iter().map(|f| f.values()).collect();
    let mut acc = Compensated::new();
    for n in (0..steps).filter(|&n| gates[n]) {
        let u = control.step(n);
        let terms = (0..grid.node_count())
            .filter(|&k| mask[k])
            .map(|k| u[k] * (theta * states[n][k] + (1.0 - theta) * states[n + 1][k]));
        acc.add(dt * grid.cell_volume() * csum(terms));
    }
    Ok(acc.value())
}

pub(crate) fn inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    inner_raw(a, b, grid.cell_volume())
}
