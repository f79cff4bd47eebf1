//! Null controls by minimizing the penalized dual functional
//!
//! ```text
//! J(p) = ½ <Λp, p> + ε ||p||² + <y_free(T), p>
//! ```
//!
//! where `Λp` is the terminal state reached from zero data under the control
//! `χ_ω χ_E φ_p` and `φ_p` is the adjoint solution with terminal value `p`.
//! The control of the minimizer `p̂` is `u = χ_ω χ_E φ_p̂`, and
//! `y(T; y0, u) = −2ε p̂`.

use crate::diagnostics::reports::observed_energy;
use crate::error::{Error, Result};
use crate::field::{csum, Compensated, Grid, ScalarField};
use crate::potential::Potential;
use crate::solver::{adjoint_step_value, inner, march, march_adjoint, march_controlled, uniform_times, PotentialTable, SolverConfig, StepControl, Trajectory};
use crate::timeset::TimeSet;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_CG_TOL: f64 = 1e-10;
pub const DEFAULT_CG_MAX_ITERS: usize = 500;

#[derive(Debug, Clone)]
pub struct HumProblem {
    pub y0: ScalarField,
    pub b: Potential,
    pub mask: Vec<bool>,
    pub e: TimeSet,
    pub horizon: f64,
    pub steps: usize,
    /// Weight of `||p||²` in the dual functional. Quadratic in the data
    /// together with the rest of `J`, so solutions scale linearly with `y0`.
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub solver: SolverConfig,
}

impl HumProblem {
    pub fn new(y0: ScalarField, b: Potential, mask: Vec<bool>, e: TimeSet, horizon: f64, steps: usize) -> Self {
        Self {
            y0,
            b,
            mask,
            e,
            horizon,
            steps,
            epsilon: DEFAULT_EPSILON,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iters: DEFAULT_CG_MAX_ITERS,
            solver: SolverConfig::default().without_boundary_guard(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("penalization must be positive, got {}", self.epsilon)));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidArgument("cg tolerance must be positive".into()));
        }
        if self.mask.len() != self.y0.grid().node_count() {
            return Err(Error::GridMismatch);
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("control region is empty".into()));
        }
        if self.e.measure() <= 0.0 {
            return Err(Error::EmptyTimeSet);
        }
        if self.steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("need T > 0 and K >= 1".into()));
        }
        self.e.check_within(self.horizon)
    }
}

/// Prepared forward/adjoint machinery shared by every application of `Λ`.
struct DualOperator<'a> {
    prob: &'a HumProblem,
    grid: Grid,
    cfg: SolverConfig,
    table: PotentialTable,
    gates: Vec<bool>,
}

impl<'a> DualOperator<'a> {
    fn new(prob: &'a HumProblem) -> Result<Self> {
        prob.validate()?;
        let grid = *prob.y0.grid();
        let cfg = prob.solver.with_dt(prob.horizon / prob.steps as f64);
        cfg.validate()?;
        let table = PotentialTable::new(&prob.b, &grid, prob.horizon, prob.steps)?;
        let gates = prob.e.step_gates(prob.horizon, prob.steps);
        Ok(Self { prob, grid, cfg, table, gates })
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        inner(&self.grid, a, b)
    }

    fn adjoint(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        march_adjoint(&self.grid, &self.cfg, &self.table, p, self.prob.steps, self.prob.horizon)
    }

    /// `u_n = χ_E(t_{n+1/2}) χ_ω (θ φ^n + (1−θ) φ^{n+1})`; exact zeros elsewhere.
    fn control_of(&self, states: &[Vec<f64>]) -> StepControl {
        let n = self.grid.node_count();
        let rows = (0..self.prob.steps)
            .map(|s| {
                if !self.gates[s] {
                    return vec![0.0; n];
                }
                let w = adjoint_step_value(states, s, self.cfg.theta);
                w.into_iter().zip(&self.prob.mask).map(|(v, &m)| if m { v } else { 0.0 }).collect()
            })
            .collect();
        StepControl::new(self.grid, rows).expect("adjoint states are finite")
    }

    fn terminal(&self, y0: &[f64], control: &StepControl) -> Result<Vec<f64>> {
        let mut states =
            march_controlled(&self.grid, &self.cfg, &self.table, y0, control, &self.prob.mask, &self.gates, self.prob.horizon)?;
        Ok(states.pop().expect("at least one state"))
    }

    fn free_terminal(&self) -> Result<Vec<f64>> {
        let order: Vec<usize> = (0..self.prob.steps).collect();
        let mut states =
            march(&self.grid, &self.cfg, &self.table, self.prob.y0.values(), &order, self.prob.horizon, true, |_| None)?;
        Ok(states.pop().expect("at least one state"))
    }

    /// `Λp`.
    fn lambda(&self, p: &[f64]) -> Result<Vec<f64>> {
        let states = self.adjoint(p)?;
        let zero = vec![0.0; self.grid.node_count()];
        self.terminal(&zero, &self.control_of(&states))
    }

    /// `(Λ + 2ε) p`.
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let eps2 = 2.0 * self.prob.epsilon;
        Ok(self.lambda(p)?.into_iter().zip(p).map(|(l, v)| l + eps2 * v).collect())
    }
}

/// `Λp` for terminal data `p`.
pub fn apply_lambda(prob: &HumProblem, p: &ScalarField) -> Result<ScalarField> {
    let op = DualOperator::new(prob)?;
    if p.grid() != prob.y0.grid() {
        return Err(Error::GridMismatch);
    }
    ScalarField::new(op.grid, op.lambda(p.values())?)
}

/// Value and gradient of the penalized dual functional at `φ_T`.
pub fn dual_functional(phi_t: &ScalarField, prob: &HumProblem) -> Result<(f64, ScalarField)> {
    let op = DualOperator::new(prob)?;
    if phi_t.grid() != prob.y0.grid() {
        return Err(Error::GridMismatch);
    }
    let p = phi_t.values();
    let free = op.free_terminal()?;
    let lp = op.lambda(p)?;
    let value = 0.5 * op.dot(&lp, p) + prob.epsilon * op.dot(p, p) + op.dot(&free, p);
    let grad = (0..p.len()).map(|k| lp[k] + 2.0 * prob.epsilon * p[k] + free[k]).collect();
    Ok((value, ScalarField::new(op.grid, grad)?))
}

#[derive(Debug, Clone)]
pub struct HumResult {
    pub control: StepControl,
    /// Minimizer `p̂` of the dual functional.
    pub phi_t: ScalarField,
    /// Adjoint trajectory of `p̂`, in forward time.
    pub adjoint: Trajectory,
    pub terminal: ScalarField,
    pub terminal_norm: f64,
    pub control_cost: f64,
    pub cg_iters: usize,
    pub dual_gradient_norm: f64,
    pub initial_gradient_norm: f64,
    pub dual_value: f64,
    /// Gradient norm after each iteration, starting with the initial one.
    pub residual_history: Vec<f64>,
}

impl HumResult {
    /// `||φ̂(0)||² / ∫∫_{ω×E} φ̂²` for the adjoint of the minimizer, the
    /// observability quotient of the time-reversed trajectory.
    pub fn observability_quotient(&self, prob: &HumProblem, theta: f64) -> Result<f64> {
        let reversed = self.adjoint.reversed();
        let mut gates = prob.e.step_gates(prob.horizon, prob.steps);
        gates.reverse();
        let observed = observed_energy(&reversed, &prob.mask, &gates, theta)?;
        if !(observed > 0.0) {
            return Err(Error::EmptyDenominator { value: observed });
        }
        Ok(self.adjoint.initial().norm_sq() / observed)
    }
}

/// Minimizes the dual functional with the conjugate residual method on
/// `(Λ + 2ε) p = −y_free(T)`, then verifies the control by a forward solve.
///
/// The iteration runs on `y0 / ||y0||` and the result is scaled back, so the
/// returned quantities are exactly homogeneous in `y0` up to round-off.
pub fn hum_solve(prob: &HumProblem) -> Result<HumResult> {
    let scale = prob.y0.norm();
    if scale == 0.0 || scale == 1.0 {
        return hum_solve_raw(prob);
    }
    let unit = HumProblem { y0: prob.y0.scaled(1.0 / scale), ..prob.clone() };
    let r = hum_solve_raw(&unit)?;
    Ok(HumResult {
        control: r.control.scaled(scale),
        phi_t: r.phi_t.scaled(scale),
        adjoint: r.adjoint.scaled(scale),
        terminal: r.terminal.scaled(scale),
        terminal_norm: r.terminal_norm * scale,
        control_cost: r.control_cost * scale,
        cg_iters: r.cg_iters,
        dual_gradient_norm: r.dual_gradient_norm * scale,
        initial_gradient_norm: r.initial_gradient_norm * scale,
        dual_value: r.dual_value * scale * scale,
        residual_history: r.residual_history.iter().map(|v| v * scale).collect(),
    })
}

fn hum_solve_raw(prob: &HumProblem) -> Result<HumResult> {
    let op = DualOperator::new(prob)?;
    let n = op.grid.node_count();
    let dt = prob.horizon / prob.steps as f64;
    let free = op.free_terminal()?;
    let g0 = op.dot(&free, &free).sqrt();
    let mut x = vec![0.0; n];
    let mut history = vec![g0];
    let mut iters = 0;
    let mut gnorm = g0;
    if g0 > 0.0 {
        // residual r = −y_free − A x = −gradient
        let mut r: Vec<f64> = free.iter().map(|v| -v).collect();
        let mut ar = op.apply(&r)?;
        let mut p = r.clone();
        let mut ap = ar.clone();
        let mut rar = op.dot(&r, &ar);
        while gnorm > prob.cg_tol * g0 && iters < prob.cg_max_iters {
            let apap = op.dot(&ap, &ap);
            if !(apap > 0.0 && rar > 0.0) {
                break;
            }
            let alpha = rar / apap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            iters += 1;
            gnorm = op.dot(&r, &r).sqrt();
            history.push(gnorm);
            if gnorm <= prob.cg_tol * g0 {
                break;
            }
            ar = op.apply(&r)?;
            let rar_new = op.dot(&r, &ar);
            let beta = rar_new / rar;
            rar = rar_new;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
                ap[k] = ar[k] + beta * ap[k];
            }
        }
        let reduction = g0 / gnorm;
        if gnorm > prob.cg_tol * g0 && reduction < 10.0 {
            return Err(Error::CGStalled { iters, reduction });
        }
    }
    let states = op.adjoint(&x)?;
    let control = op.control_of(&states);
    let terminal = op.terminal(prob.y0.values(), &control)?;
    let terminal = ScalarField::new(op.grid, terminal)?;
    let terminal_norm = terminal.norm();
    let control_cost = control.norm_sq(dt).sqrt();
    let lx = op.lambda(&x)?;
    let dual_value = 0.5 * op.dot(&lx, &x) + prob.epsilon * op.dot(&x, &x) + op.dot(&free, &x);
    // y(T) = gradient − 2εp̂ and J(p̂) ≤ −ε||p̂||² give ||y(T)|| ≤ 2√(ε|J|) + ||gradient||
    let bound = 2.0 * (prob.epsilon * dual_value.abs()).sqrt() + gnorm;
    if terminal_norm > bound * (1.0 + 1e-6) + 1e-14 * g0 {
        return Err(Error::PropertyViolated {
            which: "penalized terminal bound".into(),
            detail: format!("||y(T)|| = {terminal_norm:e} exceeds 2 sqrt(eps |J|) + ||grad|| = {bound:e}"),
        });
    }
    let times = uniform_times(prob.horizon, prob.steps);
    let fields = states.into_iter().map(|v| ScalarField::new(op.grid, v)).collect::<Result<Vec<_>>>()?;
    let adjoint = Trajectory::new(op.grid, times, fields, prob.b.sup_norm())?;
    Ok(HumResult {
        control,
        phi_t: ScalarField::new(op.grid, x)?,
        adjoint,
        terminal,
        terminal_norm,
        control_cost,
        cg_iters: iters,
        dual_gradient_norm: gnorm,
        initial_gradient_norm: g0,
        dual_value,
        residual_history: history,
    })
}

#[derive(Debug, Clone)]
pub struct BallControlResult {
    pub hum: HumResult,
    /// `cost / (||z0|| [(R−r)^{−2} + 4/T + ||b||])`, absent for zero data.
    pub implied_c1: Option<f64>,
}

/// Parameters of the ball-to-ball control problem beyond the data.
#[derive(Debug, Clone)]
pub struct BallControlSpec {
    pub x0: Vec<f64>,
    pub r: f64,
    pub big_r: f64,
    pub horizon: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub solver: SolverConfig,
}

impl BallControlSpec {
    pub fn new(x0: Vec<f64>, r: f64, big_r: f64, horizon: f64, steps: usize) -> Self {
        Self {
            x0,
            r,
            big_r,
            horizon,
            steps,
            epsilon: DEFAULT_EPSILON,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iters: DEFAULT_CG_MAX_ITERS,
            solver: SolverConfig::default().without_boundary_guard(),
        }
    }
}

/// Steers `z0` (supported in `B_r(x0)`) to zero with controls on `B_R(x0) × (0,T)`.
pub fn ball_control_solve(z0: &ScalarField, b: &Potential, spec: &BallControlSpec) -> Result<BallControlResult> {
    let grid = *z0.grid();
    if !(spec.r > 0.0 && spec.r < spec.big_r) {
        return Err(Error::InvalidArgument(format!("need 0 < r < R, got r={}, R={}", spec.r, spec.big_r)));
    }
    let inside = grid.ball_mask(&spec.x0, spec.r)?;
    let total = z0.norm_sq();
    let outside_mass = grid.cell_volume() * csum((0..grid.node_count()).filter(|&k| !inside[k]).map(|k| z0.values()[k].powi(2)));
    if total > 0.0 && outside_mass > 1e-12 * total {
        return Err(Error::SupportViolated { outside: outside_mass / total });
    }
    let mask = grid.ball_mask(&spec.x0, spec.big_r)?;
    let mut prob = HumProblem::new(z0.clone(), b.clone(), mask, TimeSet::interval(0.0, spec.horizon)?, spec.horizon, spec.steps);
    prob.epsilon = spec.epsilon;
    prob.cg_tol = spec.cg_tol;
    prob.cg_max_iters = spec.cg_max_iters;
    prob.solver = spec.solver;
    let hum = hum_solve(&prob)?;
    let norm = z0.norm();
    let implied_c1 = (norm > 0.0).then(|| {
        let bracket = (spec.big_r - spec.r).powi(-2) + 4.0 / spec.horizon + b.sup_norm();
        hum.control_cost / (norm * bracket)
    });
    Ok(BallControlResult { hum, implied_c1 })
}

/// `Σ_n dt h^dim Σ u_n v_n` for two step controls on the same grid.
pub fn control_inner(a: &StepControl, b: &StepControl, dt: f64) -> f64 {
    let mut acc = Compensated::new();
    for n in 0..a.step_count().min(b.step_count()) {
        acc.add(csum(a.step(n).iter().zip(b.step(n)).map(|(x, y)| x * y)));
    }
    dt * a.grid().cell_volume() * acc.value()
}
