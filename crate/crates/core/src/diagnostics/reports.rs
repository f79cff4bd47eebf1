//! Measured versions of the local energy, unique-continuation and
//! observability inequalities.

use std::fmt;

use crate::diagnostics::ledger::ConstantsLedger;
use crate::error::{Error, Result};
use crate::field::{csum, grad_norm_sq, Compensated, Grid};
use crate::geometry::EquidistributedSet;
use crate::solver::Trajectory;
use crate::timeset::TimeSet;

use super::frequency::DENOMINATOR_GUARD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReportKind {
    Caccioppoli,
    GradientBound,
    H0Props,
    TwoBall,
    Interpolation,
    Observability,
}

impl ReportKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Caccioppoli => "caccioppoli",
            Self::GradientBound => "gradient_bound",
            Self::H0Props => "h0_props",
            Self::TwoBall => "two_ball",
            Self::Interpolation => "interpolation",
            Self::Observability => "observability",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One measured inequality: left side, right-side components and the
/// constant or exponent they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub scenario_id: String,
    pub kind: ReportKind,
    pub lhs: f64,
    pub rhs: Vec<f64>,
    pub implied: f64,
}

pub const REPORT_CSV_HEADER: &str = "scenario_id,name,lhs,rhs_1,rhs_2,rhs_3,implied_value";

impl InequalityReport {
    fn new(kind: ReportKind, lhs: f64, rhs: Vec<f64>) -> Result<Self> {
        if !(lhs.is_finite() && lhs >= 0.0) || rhs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{kind} report has negative or non-finite parts")));
        }
        let mut r = Self { scenario_id: String::new(), kind, lhs, rhs, implied: 0.0 };
        r.implied = r.recompute();
        if !r.implied.is_finite() {
            return Err(Error::InvalidArgument(format!("{kind} report implies a non-finite value")));
        }
        Ok(r)
    }

    pub fn with_scenario(mut self, id: impl Into<String>) -> Self {
        self.scenario_id = id.into();
        self
    }

    /// Implied constant or exponent from the stored parts.
    pub fn recompute(&self) -> f64 {
        let c = &self.rhs;
        match self.kind {
            ReportKind::Caccioppoli | ReportKind::GradientBound => self.lhs / (c[0] * c[1]),
            ReportKind::H0Props => c[0] * ((self.lhs / c[1]).ln() - 1.0),
            ReportKind::TwoBall => (self.lhs / c[1]).ln() / (c[0] / c[1]).ln(),
            ReportKind::Interpolation => ((self.lhs / c[2]).ln() - c[0].ln()) / (c[1] / c[2]).ln(),
            ReportKind::Observability => self.lhs / c[0],
        }
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.scenario_id.clone(), self.kind.name().to_string(), self.lhs.to_string()];
        for i in 0..3 {
            cols.push(self.rhs.get(i).map_or(String::new(), |v| v.to_string()));
        }
        cols.push(self.implied.to_string());
        cols.join(",")
    }
}

/// Exact integral over `[a, b]` of the piecewise-linear interpolant of
/// `(times, values)`.
pub fn time_integral(times: &[f64], values: &[f64], a: f64, b: f64) -> f64 {
    let mut acc = Compensated::new();
    for k in 0..times.len().saturating_sub(1) {
        let (t0, t1) = (times[k], times[k + 1]);
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let at = |s: f64| values[k] + (values[k + 1] - values[k]) * (s - t0) / (t1 - t0);
        acc.add(0.5 * (hi - lo) * (at(lo) + at(hi)));
    }
    acc.value()
}

fn in_window(t: f64, a: f64, horizon: f64) -> bool {
    t >= a - 1e-12 * horizon
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_ball_inside(grid: &Grid, x0: &[f64], r: f64) -> Result<()> {
    if x0.len() != grid.dim() {
        return Err(Error::InvalidArgument("center dimension mismatch".into()));
    }
    if !grid.contains_cube(x0, r) {
        return Err(Error::InvalidArgument(format!("ball of radius {r} around {x0:?} leaves the box")));
    }
    Ok(())
}

fn ball_series(traj: &Trajectory, x0: &[f64], r: f64) -> Result<Vec<f64>> {
    traj.fields().iter().map(|f| f.integrate_ball(x0, r, 2)).collect()
}

fn grad_ball_series(traj: &Trajectory, x0: &[f64], r: f64) -> Result<Vec<f64>> {
    traj.fields().iter().map(|f| grad_norm_sq(f).integrate_ball(x0, r, 1)).collect()
}

fn nonzero(value: f64) -> Result<f64> {
    if !(value >= DENOMINATOR_GUARD) {
        return Err(Error::EmptyDenominator { value });
    }
    Ok(value)
}

/// Local energy estimate: `max_{[T−τ1,T]} ∫_{B_r} φ² + ∫_{T−τ1}^T ∫_{B_r} |∇φ|²`
/// against `[(R−r)^{−2} + (τ2−τ1)^{−1} + ||a||] ∫_{T−τ2}^T ∫_{B_R} φ²`.
pub fn caccioppoli_report(traj: &Trajectory, x0: &[f64], r: f64, big_r: f64, tau1: f64, tau2: f64) -> Result<InequalityReport> {
    let horizon = traj.final_time();
    check_positive("r", r)?;
    if !(r < big_r) || !(0.0 < tau1 && tau1 < tau2 && tau2 < horizon) {
        return Err(Error::InvalidArgument("need 0 < r < R and 0 < tau1 < tau2 < T".into()));
    }
    check_ball_inside(traj.grid(), x0, big_r)?;
    let times = traj.times();
    let small = ball_series(traj, x0, r)?;
    let grads = grad_ball_series(traj, x0, r)?;
    let big = ball_series(traj, x0, big_r)?;
    let start = horizon - tau1;
    let peak = times.iter().zip(&small).filter(|(t, _)| in_window(**t, start, horizon)).map(|(_, v)| *v).fold(0.0, f64::max);
    let lhs = peak + time_integral(times, &grads, start, horizon);
    let integral = nonzero(time_integral(times, &big, horizon - tau2, horizon))?;
    let bracket = (big_r - r).powi(-2) + 1.0 / (tau2 - tau1) + traj.potential_norm();
    InequalityReport::new(ReportKind::Caccioppoli, lhs, vec![bracket, integral])
}

/// Gradient estimate: `max_{[T−τ,T]} ∫_{B_R} |∇φ|²` against
/// `(R^{−4} + τ^{−2} + ||a||²) ∫_{T−2τ}^T ∫_{B_{2R}} φ²`.
pub fn gradient_bound_report(traj: &Trajectory, x0: &[f64], big_r: f64, tau: f64) -> Result<InequalityReport> {
    let horizon = traj.final_time();
    check_positive("R", big_r)?;
    if !(tau > 0.0 && tau < horizon / 2.0) {
        return Err(Error::InvalidArgument("need 0 < tau < T/2".into()));
    }
    check_ball_inside(traj.grid(), x0, 2.0 * big_r)?;
    let times = traj.times();
    let grads = grad_ball_series(traj, x0, big_r)?;
    let big = ball_series(traj, x0, 2.0 * big_r)?;
    let start = horizon - tau;
    let lhs = times.iter().zip(&grads).filter(|(t, _)| in_window(**t, start, horizon)).map(|(_, v)| *v).fold(0.0, f64::max);
    let integral = nonzero(time_integral(times, &big, horizon - 2.0 * tau, horizon))?;
    let a = traj.potential_norm();
    let bracket = big_r.powi(-4) + tau.powi(-2) + a * a;
    InequalityReport::new(ReportKind::GradientBound, lhs, vec![bracket, integral])
}

/// `h0 = C3 / ln[(1 + C4) e^P ratio]` with
/// `P = [1 + 2 C1 (1 + r^{−2})](1 + (τ2−τ1)^{−1} + ||a||^{2/3}) + 4 C3 / T + 2 T ||a||`.
///
/// Returns only when `0 < (1 + 4 C3/T + 2 T ||a|| + ||a||^{2/3}) h0 < C3`.
pub fn h0_compute(ledger: &ConstantsLedger, r: f64, tau1: f64, tau2: f64, horizon: f64, a_norm: f64, ratio: f64) -> Result<f64> {
    if !(ledger.c1 > 1.0 && ledger.c3 > 0.0 && ledger.c4 > 0.0) {
        return Err(Error::InvalidArgument("need C1 > 1, C3 > 0, C4 > 0".into()));
    }
    check_positive("r", r)?;
    check_positive("ratio", ratio)?;
    if !(0.0 < tau1 && tau1 < tau2 && tau2 < horizon) || !(a_norm >= 0.0) {
        return Err(Error::InvalidArgument("need 0 < tau1 < tau2 < T and ||a|| >= 0".into()));
    }
    let (c1, c3, c4) = (ledger.c1, ledger.c3, ledger.c4);
    let a23 = a_norm.powf(2.0 / 3.0);
    let exponent = (1.0 + 2.0 * c1 * (1.0 + r.powi(-2))) * (1.0 + 1.0 / (tau2 - tau1) + a23)
        + 4.0 * c3 / horizon
        + 2.0 * horizon * a_norm;
    let log_arg = (1.0 + c4).ln() + exponent + ratio.ln();
    if !(log_arg > 0.0) {
        return Err(Error::PropertyViolated {
            which: "h0 positivity".into(),
            detail: format!("logarithm argument exp({log_arg}) does not exceed 1"),
        });
    }
    let h0 = c3 / log_arg;
    let gate = (1.0 + 4.0 * c3 / horizon + 2.0 * horizon * a_norm + a23) * h0;
    if !(h0 > 0.0 && gate < c3) {
        return Err(Error::PropertyViolated {
            which: "h0 bound".into(),
            detail: format!("(1 + 4C3/T + 2T||a|| + ||a||^(2/3)) h0 = {gate} is not below C3 = {c3}"),
        });
    }
    Ok(h0)
}

/// Geometry of the `h0` recovery check.
#[derive(Debug, Clone, PartialEq)]
pub struct H0Geometry {
    pub x0: Vec<f64>,
    pub r: f64,
    /// Half-side of the cube `Q_R(x0)`.
    pub big_r: f64,
    pub delta: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Measures `C5` in
/// `e^{2T||a||} ∫_{T−τ2}^T ∫_{Q_R} φ² ≤ e^{1 + C5/h0} ∫_{B_{(1+δ)r}} φ²(t)`
/// for sampled `t ∈ [T − min(τ2, h0), T]`; the report keeps the worst `t`.
pub fn h0_recovery_check(traj: &Trajectory, geo: &H0Geometry, ledger: &ConstantsLedger) -> Result<InequalityReport> {
    let horizon = traj.final_time();
    let grid = traj.grid();
    if !(2.0 * geo.r <= geo.big_r) || !(geo.delta > 0.0 && geo.delta <= 1.0) {
        return Err(Error::InvalidArgument("need 0 < 2r <= R and delta in (0,1]".into()));
    }
    if !grid.contains_cube(&geo.x0, geo.big_r) {
        return Err(Error::InvalidArgument("cube Q_R leaves the box".into()));
    }
    let times = traj.times();
    let cube: Vec<f64> = traj.fields().iter().map(|f| f.integrate_cube(&geo.x0, geo.big_r, 2)).collect::<Result<_>>()?;
    let cyl = time_integral(times, &cube, horizon - geo.tau2, horizon);
    let small_t = nonzero(traj.terminal().integrate_ball(&geo.x0, geo.r, 2)?)?;
    let h0 = h0_compute(ledger, geo.r, geo.tau1, geo.tau2, horizon, traj.potential_norm(), cyl / small_t)?;
    let lhs = (2.0 * horizon * traj.potential_norm()).exp() * cyl;
    let start = horizon - geo.tau2.min(h0);
    let outer = (1.0 + geo.delta) * geo.r;
    let mut den = f64::INFINITY;
    for (f, &t) in traj.fields().iter().zip(times) {
        if in_window(t, start, horizon) {
            den = den.min(f.integrate_ball(&geo.x0, outer, 2)?);
        }
    }
    let den = nonzero(den)?;
    InequalityReport::new(ReportKind::H0Props, lhs, vec![h0, den])
}

/// `[1 + 2 C1 (1 + R^{−2})](1 + 4/T + ||a||^{2/3}) + 2 T ||a||`.
pub fn two_ball_exponent(c1: f64, big_r: f64, horizon: f64, a_norm: f64) -> f64 {
    (1.0 + 2.0 * c1 * (1.0 + big_r.powi(-2))) * (1.0 + 4.0 / horizon + a_norm.powf(2.0 / 3.0)) + 2.0 * horizon * a_norm
}

/// Raw quantities of the two-ball, one-cylinder inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBallData {
    /// `∫_{B_R} φ²(T)`.
    pub lhs: f64,
    /// `∫_{T/2}^T ∫_{Q_{2R0}} φ²` with `R0 = (1 + 2δ) R`.
    pub cylinder: f64,
    /// `2 ∫_{B_r} φ²(T)`.
    pub small: f64,
    pub horizon: f64,
    pub a_norm: f64,
    pub big_r: f64,
}

pub fn two_ball_data(traj: &Trajectory, x0: &[f64], r: f64, big_r: f64, delta: f64) -> Result<TwoBallData> {
    check_positive("r", r)?;
    if !(r < big_r) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument("need 0 < r < R and delta in (0,1]".into()));
    }
    let r0 = (1.0 + 2.0 * delta) * big_r;
    if x0.len() != traj.grid().dim() || !traj.grid().contains_cube(x0, 2.0 * r0) {
        return Err(Error::InvalidArgument(format!("cube of half-side {} leaves the box", 2.0 * r0)));
    }
    let horizon = traj.final_time();
    let cube: Vec<f64> = traj.fields().iter().map(|f| f.integrate_cube(x0, 2.0 * r0, 2)).collect::<Result<_>>()?;
    let cylinder = time_integral(traj.times(), &cube, horizon / 2.0, horizon);
    let small = 2.0 * nonzero(traj.terminal().integrate_ball(x0, r, 2)?)?;
    let lhs = traj.terminal().integrate_ball(x0, big_r, 2)?;
    Ok(TwoBallData { lhs, cylinder, small, horizon, a_norm: traj.potential_norm(), big_r })
}

impl TwoBallData {
    /// `Ã = C6 exp(E + C7/T) A`.
    pub fn scaled_cylinder(&self, ledger: &ConstantsLedger) -> f64 {
        ledger.c6
            * (two_ball_exponent(ledger.c1, self.big_r, self.horizon, self.a_norm) + ledger.c7 / self.horizon).exp()
            * self.cylinder
    }

    /// Exponent `γ*` with `LHS = Ã^{γ*} B^{1−γ*}`.
    pub fn report(&self, ledger: &ConstantsLedger) -> Result<InequalityReport> {
        let scaled = self.scaled_cylinder(ledger);
        if !(scaled > self.small) {
            return Err(Error::DegenerateScale { scaled, small: self.small });
        }
        InequalityReport::new(ReportKind::TwoBall, self.lhs, vec![scaled, self.small])
    }
}

pub fn two_ball_report(traj: &Trajectory, x0: &[f64], r: f64, big_r: f64, delta: f64, ledger: &ConstantsLedger) -> Result<InequalityReport> {
    two_ball_data(traj, x0, r, big_r, delta)?.report(ledger)
}

/// `1/T + T + T ||a|| + ||a||^{2/3}`.
pub fn interpolation_scale(horizon: f64, a_norm: f64) -> f64 {
    1.0 / horizon + horizon + horizon * a_norm + a_norm.powf(2.0 / 3.0)
}

/// Raw quantities of the interpolation inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationData {
    /// `∫ φ²(T)` over the box.
    pub terminal: f64,
    /// `∫ φ0²`.
    pub initial: f64,
    /// `∫_ω φ²(T)`.
    pub observed: f64,
    pub horizon: f64,
    pub a_norm: f64,
}

pub fn interpolation_data(traj: &Trajectory, omega: &EquidistributedSet) -> Result<InterpolationData> {
    if omega.grid() != traj.grid() {
        return Err(Error::GridMismatch);
    }
    let observed = nonzero(traj.terminal().integrate_masked(omega.mask(), 2))?;
    Ok(InterpolationData {
        terminal: traj.terminal().integrate(2),
        initial: traj.initial().integrate(2),
        observed,
        horizon: traj.final_time(),
        a_norm: traj.potential_norm(),
    })
}

impl InterpolationData {
    pub fn scale(&self) -> f64 {
        interpolation_scale(self.horizon, self.a_norm)
    }

    /// Exponent `θ*` with `∫φ²(T) = e^{C8 S} (∫φ0²)^{θ*} (∫_ω φ²(T))^{1−θ*}`.
    pub fn report(&self, ledger: &ConstantsLedger) -> Result<InequalityReport> {
        if !(self.initial > self.observed) {
            return Err(Error::DegenerateScale { scaled: self.initial, small: self.observed });
        }
        InequalityReport::new(ReportKind::Interpolation, self.terminal, vec![(ledger.c8 * self.scale()).exp(), self.initial, self.observed])
    }
}

pub fn interpolation_report(traj: &Trajectory, omega: &EquidistributedSet, ledger: &ConstantsLedger) -> Result<InequalityReport> {
    interpolation_data(traj, omega)?.report(ledger)
}

/// `Σ_n dt χ_E(t_{n+1/2}) ∫_ω w_n²` with `w_n = θ φ^{n+1} + (1−θ) φ^n`.
pub fn observed_energy(traj: &Trajectory, mask: &[bool], gates: &[bool], theta: f64) -> Result<f64> {
    let grid = traj.grid();
    if mask.len() != grid.node_count() || gates.len() != traj.steps() {
        return Err(Error::GridMismatch);
    }
    let dt = traj.dt();
    let vol = grid.cell_volume();
    let fields = traj.fields();
    let mut acc = Compensated::new();
    for n in (0..traj.steps()).filter(|&n| gates[n]) {
        let (a, b) = (fields[n].values(), fields[n + 1].values());
        let s = csum((0..mask.len()).filter(|&k| mask[k]).map(|k| {
            let w = theta * b[k] + (1.0 - theta) * a[k];
            w * w
        }));
        acc.add(dt * vol * s);
    }
    Ok(acc.value())
}

/// `∫ φ²(T) / ∫∫_{ω×E} φ²` for an arbitrary node mask, with `E` gated by
/// step midpoints and the step integrand taken at the `θ` point.
pub fn observability_quotient(traj: &Trajectory, mask: &[bool], e: &TimeSet, theta: f64) -> Result<InequalityReport> {
    if e.measure() <= 0.0 {
        return Err(Error::EmptyTimeSet);
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("observation set is empty".into()));
    }
    let gates = e.step_gates(traj.final_time(), traj.steps());
    let observed = nonzero(observed_energy(traj, mask, &gates, theta)?)?;
    InequalityReport::new(ReportKind::Observability, traj.terminal().integrate(2), vec![observed])
}

pub fn observability_report(traj: &Trajectory, omega: &EquidistributedSet, e: &TimeSet) -> Result<InequalityReport> {
    if omega.grid() != traj.grid() {
        return Err(Error::GridMismatch);
    }
    observability_quotient(traj, omega.mask(), e, 0.5)
}

/// One point of an observability sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub a_norm: f64,
    pub horizon: f64,
    pub quotient: f64,
}

/// Per-level maxima and the fit `ln(max quotient) ≈ c0 + slope·(T||a|| + ||a||^{2/3})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRegression {
    /// `(||a||, T, max quotient, regressor)` per level, ordered by `||a||`.
    pub levels: Vec<(f64, f64, f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl SweepRegression {
    pub fn is_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].2 >= w[0].2)
    }

    /// CSV `a_norm,T,max_quotient,regressor,ln_max_quotient,fitted` plus a
    /// trailing summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a_norm,T,max_quotient,regressor,ln_max_quotient,fitted\n");
        for &(a, t, q, x) in &self.levels {
            out.push_str(&format!("{a},{t},{q},{x},{},{}\n", q.ln(), self.intercept + self.slope * x));
        }
        out.push_str(&format!("# slope={} intercept={} r_squared={}\n", self.slope, self.intercept, self.r_squared));
        out
    }
}

pub fn sweep_regression(points: &[SweepPoint]) -> Result<SweepRegression> {
    let mut levels: Vec<(f64, f64, f64, f64)> = Vec::new();
    for p in points {
        if !(p.quotient > 0.0 && p.quotient.is_finite()) {
            return Err(Error::FitFailed(format!("non-positive quotient at ||a||={}", p.a_norm)));
        }
        match levels.iter_mut().find(|l| l.0 == p.a_norm && l.1 == p.horizon) {
            Some(l) => l.2 = l.2.max(p.quotient),
            None => levels.push((p.a_norm, p.horizon, p.quotient, p.horizon * p.a_norm + p.a_norm.powf(2.0 / 3.0))),
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if levels.len() < 2 {
        return Err(Error::FitFailed("need at least two levels".into()));
    }
    let xs: Vec<f64> = levels.iter().map(|l| l.3).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.2.ln()).collect();
    let n = xs.len() as f64;
    let mx = csum(xs.iter().copied()) / n;
    let my = csum(ys.iter().copied()) / n;
    let sxx = csum(xs.iter().map(|x| (x - mx).powi(2)));
    let sxy = csum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    let syy = csum(ys.iter().map(|y| (y - my).powi(2)));
    if sxx == 0.0 {
        return Err(Error::FitFailed("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SweepRegression { levels, slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_omega, build_tiling, OmegaShape};
    use crate::potential::{gaussian_field, Potential};
    use crate::solver::{solve, SolverConfig};

    fn ledger() -> ConstantsLedger {
        let mut l = ConstantsLedger::default();
        l.c4 = 1.0;
        l
    }

    #[test]
    fn h0_worked_examples() {
        let l = ledger();
        let h0 = h0_compute(&l, 1.0, 1.0, 2.0, 4.0, 0.0, 1.0).unwrap();
        assert!((h0 - 1.0 / (19.0 + 2f64.ln())).abs() < 1e-15);
        assert!((h0 - 0.050779).abs() < 1e-6);
        let h0e = h0_compute(&l, 1.0, 1.0, 2.0, 4.0, 0.0, std::f64::consts::E).unwrap();
        assert!((h0e - 1.0 / (20.0 + 2f64.ln())).abs() < 1e-15);
        assert!(matches!(h0_compute(&l, 1.0, 1.0, 2.0, 4.0, 0.0, 1e-20), Err(Error::PropertyViolated { .. })));
    }

    #[test]
    fn time_integral_of_linear_interpolant() {
        let t = [0.0, 1.0, 2.0];
        let v = [0.0, 2.0, 2.0];
        assert!((time_integral(&t, &v, 0.0, 2.0) - 3.0).abs() < 1e-15);
        assert!((time_integral(&t, &v, 0.5, 1.5) - (0.5 * 0.5 * 3.0 + 1.0)).abs() < 1e-15);
        assert_eq!(time_integral(&t, &v, 3.0, 4.0), 0.0);
    }

    fn heat(scale: f64) -> Trajectory {
        let g = Grid::new(1, 6.0, 385).unwrap();
        let f = gaussian_field(g, &[0.2], 0.4).unwrap().scaled(scale);
        solve(&f, &Potential::zero(), 1.0, 64, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn zero_fields_give_empty_denominators() {
        let z = heat(0.0);
        assert!(matches!(caccioppoli_report(&z, &[0.0], 0.5, 1.0, 0.2, 0.5), Err(Error::EmptyDenominator { .. })));
        assert!(matches!(gradient_bound_report(&z, &[0.0], 0.5, 0.2), Err(Error::EmptyDenominator { .. })));
        let t = build_tiling(*z.grid(), 0.5).unwrap();
        let w = build_omega(&t, 0.25, OmegaShape::MinBall).unwrap();
        let e = TimeSet::interval(0.0, 1.0).unwrap();
        assert!(matches!(observability_report(&z, &w, &e), Err(Error::EmptyDenominator { .. })));
    }

    #[test]
    fn reports_are_scale_invariant_and_recomputable() {
        let a = heat(1.0);
        let b = heat(7.0);
        let l = ConstantsLedger::default();
        let t = build_tiling(*a.grid(), 0.5).unwrap();
        let w = build_omega(&t, 0.25, OmegaShape::MinBall).unwrap();
        let e = TimeSet::interval(0.2, 0.9).unwrap();
        let geo = H0Geometry { x0: vec![0.0], r: 0.5, big_r: 1.0, delta: 0.5, tau1: 0.2, tau2: 0.5 };
        let make = |tr: &Trajectory| {
            vec![
                caccioppoli_report(tr, &[0.0], 0.5, 1.0, 0.2, 0.5).unwrap(),
                gradient_bound_report(tr, &[0.0], 0.5, 0.3).unwrap(),
                h0_recovery_check(tr, &geo, &l).unwrap(),
                two_ball_report(tr, &[0.0], 0.3, 0.6, 0.5, &l).unwrap(),
                interpolation_report(tr, &w, &l).unwrap(),
                observability_report(tr, &w, &e).unwrap(),
            ]
        };
        for (x, y) in make(&a).iter().zip(make(&b)) {
            assert!((x.implied - y.implied).abs() <= 1e-10 * x.implied.abs(), "{:?} vs {:?}", x, y);
            assert!((x.recompute() - x.implied).abs() <= 1e-12 * x.implied.abs());
        }
    }

    #[test]
    fn two_ball_exponent_edges() {
        let l = ConstantsLedger::default();
        let d = TwoBallData { lhs: 1.0, cylinder: 1.0, small: 1.0, horizon: 1.0, a_norm: 0.0, big_r: 1.0 };
        assert!(d.report(&l).unwrap().implied.abs() < 1e-15);
        let scaled = d.scaled_cylinder(&l);
        let top = TwoBallData { lhs: scaled, ..d };
        assert!((top.report(&l).unwrap().implied - 1.0).abs() < 1e-12);
        let tiny = TwoBallData { cylinder: 1e-300, ..d };
        assert!(matches!(tiny.report(&l), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn full_box_observation_bound() {
        let tr = heat(1.0);
        let mask = vec![true; tr.grid().node_count()];
        let e = TimeSet::interval(0.0, 1.0).unwrap();
        let q = observability_quotient(&tr, &mask, &e, 0.5).unwrap();
        assert!(q.implied <= 1.0 * (1.0 + 1e-6));
    }

    #[test]
    fn csv_row_layout() {
        let r = InequalityReport::new(ReportKind::Observability, 2.0, vec![4.0]).unwrap().with_scenario("s1");
        assert_eq!(r.csv_row(), "s1,observability,2,4,,,0.5");
    }

    #[test]
    fn regression_recovers_line() {
        let pts: Vec<SweepPoint> = [0.0, 1.0, 5.0]
            .iter()
            .flat_map(|&a| {
                let x: f64 = a + f64::powf(a, 2.0 / 3.0);
                [SweepPoint { a_norm: a, horizon: 1.0, quotient: (1.0 + 0.5 * x).exp() }, SweepPoint { a_norm: a, horizon: 1.0, quotient: 0.5 }]
            })
            .collect();
        let reg = sweep_regression(&pts).unwrap();
        assert!((reg.slope - 0.5).abs() < 1e-12);
        assert!((reg.intercept - 1.0).abs() < 1e-12);
        assert!((reg.r_squared - 1.0).abs() < 1e-12);
        assert!(reg.is_monotone());
    }
}
