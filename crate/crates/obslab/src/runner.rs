//! Up-front validation, parallel execution and deterministic output of scenarios.

use std::fs;
use std::path::Path;

use obslab_core::control::{ball_control_solve, hum_solve, BallControlSpec, HumProblem};
use obslab_core::cutoff::QuinticCutoff;
use obslab_core::diagnostics::{
    caccioppoli_report, frequency_trace, interpolation_report, observability_report, sweep_regression, two_ball_report,
    ConstantsLedger, InequalityReport, SweepPoint, REPORT_CSV_HEADER,
};
use obslab_core::error::Error as CoreError;
use obslab_core::field::{Grid, ScalarField};
use obslab_core::geometry::{build_omega, build_tiling, check_radii, find_density_point, telescope, EquidistributedSet, OmegaShape};
use obslab_core::potential::{band_limited_field, gaussian_field, seeded_random_potential, Potential};
use obslab_core::solver::{solve, SolverConfig, Trajectory};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, InitialSpec, OmegaSpec, PotentialSpec, Scenario, Task};
use crate::plot::{polyline_svg, Series};

pub const CONTROLS_CSV_HEADER: &str = "scenario_id,y0_norm,terminal_norm,control_cost,cg_iters,b_sup_norm,T";

#[derive(Debug, Error)]
#[error("scenario `{id}`: {source}")]
pub struct ScenarioError {
    pub id: String,
    #[source]
    pub source: CoreError,
}

/// A scenario whose parameters passed validation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub grid: Grid,
    pub potential: Potential,
    pub initial: ScalarField,
    pub solver: SolverConfig,
    pub omega: Option<EquidistributedSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub id: String,
    pub y0_norm: f64,
    pub terminal_norm: f64,
    pub control_cost: f64,
    pub cg_iters: usize,
    pub b_sup_norm: f64,
    pub horizon: f64,
}

impl ControlRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.id, self.y0_norm, self.terminal_norm, self.control_cost, self.cg_iters, self.b_sup_norm, self.horizon
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOutput {
    pub reports: Vec<InequalityReport>,
    pub controls: Vec<ControlRow>,
    pub files: Vec<OutputFile>,
}

impl ScenarioOutput {
    fn file(&mut self, name: String, contents: String) {
        self.files.push(OutputFile { name, contents });
    }
}

fn cfg_err(s: &Scenario, key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::new(s.line_of(key), key, format!("scenario `{}`: {e}", s.id))
}

fn require(s: &Scenario, key: &str, ok: bool, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(cfg_err(s, key, message))
    }
}

/// Shape of the random potentials: the anchor lies in the middle three quarters of the box.
fn random_potential(s: &Scenario, seed: u64, norm: f64, bandwidth: f64) -> Result<Potential, CoreError> {
    seeded_random_potential(seed, norm, bandwidth, s.dim, 0.75 * s.half_length)
}

fn initial_field(grid: Grid, spec: &InitialSpec, seed_offset: u64) -> Result<ScalarField, CoreError> {
    match spec {
        InitialSpec::Gaussian { center, width } => gaussian_field(grid, center, *width),
        InitialSpec::Random { seed, bandwidth, envelope } => band_limited_field(grid, seed + seed_offset, *bandwidth, *envelope),
        InitialSpec::Bump { center, width } => {
            if center.len() != grid.dim() {
                return Err(CoreError::InvalidArgument("bump center dimension mismatch".into()));
            }
            QuinticCutoff::new(center, 0.5 * width, *width)?.field(grid)
        }
    }
}

/// Checks every precondition that does not need a solve.
pub fn prepare(s: &Scenario) -> Result<Prepared, ConfigError> {
    require(s, "dim", s.dim == 1 || s.dim == 2, "dim must be 1 or 2")?;
    let grid = Grid::new(s.dim, s.half_length, s.points).map_err(|e| cfg_err(s, "M", e))?;
    require(s, "T", s.horizon.is_finite() && s.horizon > 0.0, "T must be positive")?;
    require(s, "K", s.steps > 0, "K must be at least 1")?;
    let mut solver = SolverConfig { theta: s.theta, dt: s.dt(), ..Default::default() };
    if !s.boundary_guard {
        solver = solver.without_boundary_guard();
    }
    solver.validate().map_err(|e| cfg_err(s, "theta", e))?;
    s.e.check_within(s.horizon).map_err(|e| cfg_err(s, "E", e))?;
    require(s, "x0", s.x0.len() == s.dim, "x0 needs one coordinate per dimension")?;

    let potential = match &s.potential {
        PotentialSpec::Zero => Potential::zero(),
        PotentialSpec::Constant(c) => {
            require(s, "potential_value", c.is_finite(), "must be finite")?;
            Potential::constant(*c)
        }
        PotentialSpec::Random { seed, norm, bandwidth } => {
            random_potential(s, *seed, *norm, *bandwidth).map_err(|e| cfg_err(s, "potential_norm", e))?
        }
    };
    if let InitialSpec::Gaussian { center, .. } | InitialSpec::Bump { center, .. } = &s.initial {
        require(s, "initial_center", center.len() == s.dim, "needs one coordinate per dimension")?;
    }
    let initial = initial_field(grid, &s.initial, 0).map_err(|e| cfg_err(s, "initial", e))?;

    let radii_set = s.key_lines.iter().any(|(k, _)| k == "r1" || k == "r2");
    let omega = if s.task.uses_omega() || radii_set {
        check_radii(s.r1, s.r2).map_err(|e| cfg_err(s, if s.key_lines.iter().any(|(k, _)| k == "r1") { "r1" } else { "r2" }, e))?;
        let tiling = build_tiling(grid, s.r2).map_err(|e| cfg_err(s, "r2", e))?;
        let shape = match s.omega {
            OmegaSpec::MinBall => OmegaShape::MinBall,
            OmegaSpec::Ball(rho) => OmegaShape::Ball(rho),
        };
        Some(build_omega(&tiling, s.r1, shape).map_err(|e| cfg_err(s, "omega", e))?)
    } else {
        None
    };
    if matches!(s.task, Task::Observability | Task::Control | Task::Sweep | Task::Telescope) {
        require(s, "E", s.e.measure() > 0.0, "time set has zero measure")?;
    }

    let inside = |radius: f64| grid.contains_cube(&s.x0, radius);
    match s.task {
        Task::Solve | Task::Interpolation | Task::Observability => {}
        Task::Frequency => {
            require(s, "r", s.r > 0.0, "r must be positive")?;
            if s.key_lines.iter().any(|(k, _)| k == "delta") {
                require(s, "delta", s.delta > 0.0 && s.delta < 1.0, "delta must lie in (0,1) for the frequency cutoff")?;
            }
            if let Some(l) = s.lambda {
                require(s, "lambda", l > 0.0, "lambda must be positive")?;
            }
        }
        Task::Caccioppoli => {
            require(s, "r", s.r > 0.0 && s.r < s.big_r, "need 0 < r < R")?;
            require(s, "R", inside(s.big_r), "B_R(x0) leaves the box")?;
            require(s, "tau1", s.tau1 > 0.0 && s.tau1 < s.tau2, "need 0 < tau1 < tau2")?;
            require(s, "tau2", s.tau2 < s.horizon, "need tau2 < T")?;
        }
        Task::TwoBall => {
            require(s, "r", s.r > 0.0 && s.r < s.big_r, "need 0 < r < R")?;
            require(s, "delta", s.delta > 0.0, "delta must be positive")?;
        }
        Task::Telescope => {
            require(s, "depth", s.depth > 0, "depth must be at least 1")?;
            if let Some(l) = s.density_point {
                require(s, "l", l > 0.0 && l < s.horizon, "l must lie in (0, T)")?;
            }
        }
        Task::Control => {
            require(s, "epsilon", s.epsilon > 0.0, "epsilon must be positive")?;
            require(s, "cg_tol", s.cg_tol > 0.0, "cg_tol must be positive")?;
            require(s, "cg_max_iters", s.cg_max_iters > 0, "cg_max_iters must be at least 1")?;
        }
        Task::BallControl => {
            require(s, "r", s.r > 0.0 && s.r < s.big_r, "need 0 < r < R")?;
            require(s, "R", inside(s.big_r), "B_R(x0) leaves the box")?;
            require(s, "epsilon", s.epsilon > 0.0, "epsilon must be positive")?;
            require(s, "cg_tol", s.cg_tol > 0.0, "cg_tol must be positive")?;
        }
        Task::Sweep => {
            require(s, "sweep_norms", s.sweep_norms.iter().all(|a| a.is_finite() && *a >= 0.0), "norms must be finite and >= 0")?;
            let mut distinct = s.sweep_norms.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            require(s, "sweep_norms", distinct.len() >= 2, "need at least two distinct norms")?;
            require(s, "sweep_seeds", s.sweep_seeds > 0, "need at least one seed")?;
        }
    }
    Ok(Prepared { scenario: s.clone(), grid, potential, initial, solver, omega })
}

/// Validates all scenarios before anything runs.
pub fn prepare_all(scenarios: &[Scenario]) -> Result<Vec<Prepared>, ConfigError> {
    scenarios.iter().map(prepare).collect()
}

fn trajectory(p: &Prepared) -> Result<Trajectory, CoreError> {
    let s = &p.scenario;
    solve(&p.initial, &p.potential, s.horizon, s.steps, &p.solver)
}

fn omega(p: &Prepared) -> &EquidistributedSet {
    p.omega.as_ref().expect("validated scenarios that need omega carry it")
}

fn run_frequency(p: &Prepared, out: &mut ScenarioOutput) -> Result<(), CoreError> {
    let s = &p.scenario;
    let mut traj = trajectory(p)?;
    if s.key_lines.iter().any(|(k, _)| k == "delta") {
        // Zero on the last two node layers of the ball so the vanishing check sees exact zeros.
        let outer = s.r - 2.0 * p.grid.spacing();
        let eta = QuinticCutoff::new(&s.x0, (1.0 - s.delta) * s.r, outer)?.field(p.grid)?;
        traj = traj.multiplied(&eta)?;
    }
    let lambda = s.lambda.unwrap_or(4.0 * s.dt());
    let trace = frequency_trace(&traj, &s.x0, s.r, lambda)?;
    let points: Vec<(f64, f64)> = trace.samples.iter().map(|x| (x.t, x.n)).collect();
    out.file(format!("freq_{}.csv", s.id), trace.to_csv());
    out.file(format!("freq_{}.svg", s.id), frequency_svg(&s.id, &points));
    Ok(())
}

pub fn frequency_svg(id: &str, points: &[(f64, f64)]) -> String {
    polyline_svg(&format!("frequency {id}"), "t", "N(t)", &[Series { label: "N".into(), points: points.to_vec() }])
}

pub fn sweep_svg(id: &str, points: &[(f64, f64)]) -> String {
    polyline_svg(&format!("sweep {id}"), "||a||", "ln max quotient", &[Series { label: "ln max quotient".into(), points: points.to_vec() }])
}

fn run_telescope(p: &Prepared, out: &mut ScenarioOutput) -> Result<(), CoreError> {
    let s = &p.scenario;
    let l = match s.density_point {
        Some(l) => l,
        None => find_density_point(&s.e)?,
    };
    let kappa = ConstantsLedger::default().kappa();
    let seq = telescope(&s.e, l, kappa, s.horizon, s.depth)?;
    let mut csv = String::from("m,l_m,l_m_next,gap,measure,slack\n");
    for step in &seq.certificate {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            step.m,
            seq.term(step.m),
            seq.term(step.m + 1),
            step.gap,
            step.measure,
            step.slack()
        ));
    }
    out.file(format!("telescope_{}.csv", s.id), csv);
    Ok(())
}

fn run_control(p: &Prepared, out: &mut ScenarioOutput) -> Result<(), CoreError> {
    let s = &p.scenario;
    let mut prob = HumProblem::new(p.initial.clone(), p.potential.clone(), omega(p).mask().to_vec(), s.e.clone(), s.horizon, s.steps);
    prob.epsilon = s.epsilon;
    prob.cg_tol = s.cg_tol;
    prob.cg_max_iters = s.cg_max_iters;
    prob.solver.theta = s.theta;
    let res = hum_solve(&prob)?;
    out.controls.push(ControlRow {
        id: s.id.clone(),
        y0_norm: p.initial.norm(),
        terminal_norm: res.terminal_norm,
        control_cost: res.control_cost,
        cg_iters: res.cg_iters,
        b_sup_norm: p.potential.sup_norm(),
        horizon: s.horizon,
    });
    if s.export {
        out.file(format!("control_{}.csv", s.id), res.control.to_csv(s.horizon));
        out.file(format!("omega_{}.csv", s.id), omega(p).to_csv());
    }
    Ok(())
}

fn run_ball_control(p: &Prepared, out: &mut ScenarioOutput) -> Result<(), CoreError> {
    let s = &p.scenario;
    let mut spec = BallControlSpec::new(s.x0.clone(), s.r, s.big_r, s.horizon, s.steps);
    spec.epsilon = s.epsilon;
    spec.cg_tol = s.cg_tol;
    spec.cg_max_iters = s.cg_max_iters;
    spec.solver.theta = s.theta;
    let res = ball_control_solve(&p.initial, &p.potential, &spec)?;
    out.controls.push(ControlRow {
        id: s.id.clone(),
        y0_norm: p.initial.norm(),
        terminal_norm: res.hum.terminal_norm,
        control_cost: res.hum.control_cost,
        cg_iters: res.hum.cg_iters,
        b_sup_norm: p.potential.sup_norm(),
        horizon: s.horizon,
    });
    let c1 = res.implied_c1.map_or(String::new(), |v| v.to_string());
    out.file(
        format!("ball_{}.csv", s.id),
        format!("r,R,T,b_sup_norm,z0_norm,control_cost,implied_c1\n{},{},{},{},{},{},{c1}\n", s.r, s.big_r, s.horizon, p.potential.sup_norm(), p.initial.norm(), res.hum.control_cost),
    );
    Ok(())
}

fn run_sweep(p: &Prepared, out: &mut ScenarioOutput) -> Result<(), CoreError> {
    let s = &p.scenario;
    let bandwidth = match s.potential {
        PotentialSpec::Random { bandwidth, .. } => bandwidth,
        _ => 2.0,
    };
    let cases: Vec<(f64, u64)> = s.sweep_norms.iter().flat_map(|&a| (0..s.sweep_seeds).map(move |k| (a, k))).collect();
    let results: Vec<Result<InequalityReport, CoreError>> = cases
        .par_iter()
        .map(|&(norm, seed)| {
            let a = random_potential(s, seed, norm, bandwidth)?;
            let f = initial_field(p.grid, &s.initial, seed)?;
            let traj = solve(&f, &a, s.horizon, s.steps, &p.solver)?;
            Ok(observability_report(&traj, omega(p), &s.e)?.with_scenario(format!("{}/a={norm}/seed={seed}", s.id)))
        })
        .collect();
    let mut points = Vec::with_capacity(cases.len());
    for (r, &(norm, _)) in results.into_iter().zip(&cases) {
        let report = r?;
        points.push(SweepPoint { a_norm: norm, horizon: s.horizon, quotient: report.implied });
        out.reports.push(report);
    }
    let reg = sweep_regression(&points)?;
    let curve: Vec<(f64, f64)> = reg.levels.iter().map(|l| (l.0, l.2.ln())).collect();
    out.file(format!("sweep_{}.csv", s.id), reg.to_csv());
    out.file(format!("sweep_{}.svg", s.id), sweep_svg(&s.id, &curve));
    Ok(())
}

/// Runs one validated scenario.
pub fn execute(p: &Prepared) -> Result<ScenarioOutput, ScenarioError> {
    let s = &p.scenario;
    let mut out = ScenarioOutput::default();
    let ledger = ConstantsLedger::default();
    let result = (|| -> Result<(), CoreError> {
        match s.task {
            Task::Solve => {
                let traj = trajectory(p)?;
                if s.export {
                    out.file(format!("traj_{}.csv", s.id), traj.to_csv());
                }
            }
            Task::Frequency => run_frequency(p, &mut out)?,
            Task::Caccioppoli => {
                let r = caccioppoli_report(&trajectory(p)?, &s.x0, s.r, s.big_r, s.tau1, s.tau2)?;
                out.reports.push(r.with_scenario(s.id.clone()));
            }
            Task::TwoBall => {
                let r = two_ball_report(&trajectory(p)?, &s.x0, s.r, s.big_r, s.delta, &ledger)?;
                out.reports.push(r.with_scenario(s.id.clone()));
            }
            Task::Interpolation => {
                let r = interpolation_report(&trajectory(p)?, omega(p), &ledger)?;
                out.reports.push(r.with_scenario(s.id.clone()));
            }
            Task::Observability => {
                let r = observability_report(&trajectory(p)?, omega(p), &s.e)?;
                out.reports.push(r.with_scenario(s.id.clone()));
            }
            Task::Telescope => run_telescope(p, &mut out)?,
            Task::Control => run_control(p, &mut out)?,
            Task::BallControl => run_ball_control(p, &mut out)?,
            Task::Sweep => run_sweep(p, &mut out)?,
        }
        Ok(())
    })();
    result.map(|()| out).map_err(|source| ScenarioError { id: s.id.clone(), source })
}

/// Runs all scenarios on `jobs` threads (0 = one per logical core) and
/// returns results in declared order.
pub fn execute_all(prepared: &[Prepared], jobs: usize) -> Vec<Result<ScenarioOutput, ScenarioError>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| prepared.par_iter().map(execute).collect())
}

/// Writes `reports.csv`, `controls.csv` and per-scenario files for the
/// successful scenarios, in declared order.
pub fn write_outputs(dir: &Path, results: &[Result<ScenarioOutput, ScenarioError>]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut reports = format!("{REPORT_CSV_HEADER}\n");
    let mut controls = format!("{CONTROLS_CSV_HEADER}\n");
    for out in results.iter().flatten() {
        for r in &out.reports {
            reports.push_str(&r.csv_row());
            reports.push('\n');
        }
        for c in &out.controls {
            controls.push_str(&c.csv_row());
            controls.push('\n');
        }
        for f in &out.files {
            fs::write(dir.join(&f.name), &f.contents)?;
        }
    }
    fs::write(dir.join("reports.csv"), reports)?;
    fs::write(dir.join("controls.csv"), controls)?;
    Ok(())
}

/// Re-renders SVGs from the frequency and sweep CSVs in `dir`; returns the
/// names written.
pub fn rerender(dir: &Path) -> std::io::Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") && (n.starts_with("freq_") || n.starts_with("sweep_")))
        .collect();
    names.sort();
    let mut written = Vec::new();
    for name in names {
        let text = fs::read_to_string(dir.join(&name))?;
        let stem = name.trim_end_matches(".csv");
        let svg = match stem.strip_prefix("freq_") {
            Some(id) => frequency_svg(id, &csv_columns(&text, "t", "N")),
            None => sweep_svg(stem.trim_start_matches("sweep_"), &csv_columns(&text, "a_norm", "ln_max_quotient")),
        };
        let target = format!("{stem}.svg");
        fs::write(dir.join(&target), svg)?;
        written.push(target);
    }
    Ok(written)
}

/// Numeric pairs from two named columns; comment and malformed rows are skipped.
fn csv_columns(text: &str, x: &str, y: &str) -> Vec<(f64, f64)> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return Vec::new() };
    let cols: Vec<&str> = header.split(',').collect();
    let (Some(ix), Some(iy)) = (cols.iter().position(|c| *c == x), cols.iter().position(|c| *c == y)) else {
        return Vec::new();
    };
    lines
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            Some((v.get(ix)?.parse().ok()?, v.get(iy)?.parse().ok()?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn inverted_radii_fail_validation() {
        let s = parse_config("[a]\ntask = observability\nr1 = 0.5\nr2 = 0.25\n").unwrap();
        let err = prepare_all(&s).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("0 < r1 < r2 < +inf"), "{err}");
    }

    #[test]
    fn time_set_beyond_horizon_fails_validation() {
        let s = parse_config("[a]\ntask = observability\nT = 0.5\nE = \"(0,0.8)\"\n").unwrap();
        assert_eq!(prepare_all(&s).unwrap_err().field, "E");
    }

    #[test]
    fn csv_columns_skip_comments() {
        let text = "a_norm,T,max_quotient,regressor,ln_max_quotient,fitted\n0,1,2,0,0.7,0.6\n# slope=1\n";
        assert_eq!(csv_columns(text, "a_norm", "ln_max_quotient"), vec![(0.0, 0.7)]);
    }

    #[test]
    fn telescope_scenario_writes_certificate() {
        let s = parse_config("[t]\ntask = telescope\nE = \"(0,1)\"\n").unwrap();
        let p = prepare_all(&s).unwrap();
        let out = execute(&p[0]).unwrap();
        assert_eq!(out.files.len(), 1);
        assert_eq!(out.files[0].contents.lines().count(), 21);
    }
}
