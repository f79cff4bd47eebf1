//! Scenario files: flat `[scenario <id>]` sections of `key = value` lines.
//!
//! ```text
//! # comment
//! [scenario heat]
//! task = observability
//! M = 257
//! E = "(0,0.5)+(0.6,1)"
//! ```

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use obslab_core::timeset::TimeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {field}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Solve,
    Frequency,
    Caccioppoli,
    TwoBall,
    Interpolation,
    Observability,
    Telescope,
    Control,
    BallControl,
    Sweep,
}

impl Task {
    pub const ALL: [Task; 10] = [
        Task::Solve,
        Task::Frequency,
        Task::Caccioppoli,
        Task::TwoBall,
        Task::Interpolation,
        Task::Observability,
        Task::Telescope,
        Task::Control,
        Task::BallControl,
        Task::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::Frequency => "frequency",
            Task::Caccioppoli => "caccioppoli",
            Task::TwoBall => "two_ball",
            Task::Interpolation => "interpolation",
            Task::Observability => "observability",
            Task::Telescope => "telescope",
            Task::Control => "control",
            Task::BallControl => "ball_control",
            Task::Sweep => "sweep",
        }
    }

    /// Tasks that need the equidistributed observation set.
    pub fn uses_omega(self) -> bool {
        matches!(self, Task::Interpolation | Task::Observability | Task::Control | Task::Sweep)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`; expected one of {}", Task::ALL.map(Task::name).join(", ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Zero,
    Constant(f64),
    Random { seed: u64, norm: f64, bandwidth: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Gaussian { center: Vec<f64>, width: f64 },
    Random { seed: u64, bandwidth: f64, envelope: f64 },
    /// Quintic bump equal to 1 on `B_{width/2}(center)` and 0 outside `B_width(center)`.
    Bump { center: Vec<f64>, width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSpec {
    MinBall,
    Ball(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// Line of the section header.
    pub line: usize,
    pub task: Task,
    pub dim: usize,
    pub half_length: f64,
    pub points: usize,
    pub horizon: f64,
    pub steps: usize,
    pub theta: f64,
    pub boundary_guard: bool,
    pub potential: PotentialSpec,
    pub initial: InitialSpec,
    pub r1: f64,
    pub r2: f64,
    pub omega: OmegaSpec,
    pub e: TimeSet,
    pub x0: Vec<f64>,
    pub r: f64,
    pub big_r: f64,
    pub delta: f64,
    pub lambda: Option<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub density_point: Option<f64>,
    pub depth: usize,
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub sweep_norms: Vec<f64>,
    pub sweep_seeds: u64,
    pub export: bool,
    /// Line of every key that was set, for diagnostics.
    pub key_lines: Vec<(String, usize)>,
}

impl Scenario {
    fn defaults(id: String, line: usize) -> Self {
        Self {
            id,
            line,
            task: Task::Solve,
            dim: 1,
            half_length: 4.0,
            points: 257,
            horizon: 1.0,
            steps: 100,
            theta: 0.5,
            boundary_guard: true,
            potential: PotentialSpec::Zero,
            initial: InitialSpec::Gaussian { center: vec![0.0], width: 0.5 },
            r1: 0.25,
            r2: 0.5,
            omega: OmegaSpec::MinBall,
            e: TimeSet::empty(),
            x0: vec![0.0],
            r: 0.5,
            big_r: 1.0,
            delta: 0.5,
            lambda: None,
            tau1: 0.25,
            tau2: 0.5,
            density_point: None,
            depth: 20,
            epsilon: obslab_core::control::DEFAULT_EPSILON,
            cg_tol: obslab_core::control::DEFAULT_CG_TOL,
            cg_max_iters: obslab_core::control::DEFAULT_CG_MAX_ITERS,
            sweep_norms: vec![0.0, 1.0, 5.0, 10.0, 20.0],
            sweep_seeds: 10,
            export: true,
            key_lines: Vec::new(),
        }
    }

    /// Line where `key` was set, or the section header.
    pub fn line_of(&self, key: &str) -> usize {
        self.key_lines.iter().find(|(k, _)| k == key).map_or(self.line, |&(_, l)| l)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

#[derive(Default)]
struct RawInitial {
    kind: Option<String>,
    center: Option<Vec<f64>>,
    width: Option<f64>,
    seed: Option<u64>,
    bandwidth: Option<f64>,
    envelope: Option<f64>,
}

#[derive(Default)]
struct RawPotential {
    kind: Option<String>,
    value: Option<f64>,
    seed: Option<u64>,
    norm: Option<f64>,
    bandwidth: Option<f64>,
}

struct Section {
    scenario: Scenario,
    task_set: bool,
    e_set: bool,
    potential: RawPotential,
    initial: RawInitial,
    omega_kind: Option<String>,
    omega_radius: Option<f64>,
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>().map_err(|_| ConfigError::new(line, key, format!("cannot parse `{v}`")))
}

fn parse_vec(line: usize, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|p| parse_num::<f64>(line, key, p.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(ConfigError::new(line, key, format!("expected true/false, got `{v}`"))),
    }
}

impl Section {
    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let s = &mut self.scenario;
        match key {
            "task" => {
                s.task = v.parse().map_err(|m| ConfigError::new(line, key, m))?;
                self.task_set = true;
            }
            "dim" => s.dim = parse_num(line, key, v)?,
            "L" => s.half_length = parse_num(line, key, v)?,
            "M" => s.points = parse_num(line, key, v)?,
            "T" => s.horizon = parse_num(line, key, v)?,
            "K" => s.steps = parse_num(line, key, v)?,
            "theta" => s.theta = parse_num(line, key, v)?,
            "boundary_guard" => s.boundary_guard = parse_bool(line, key, v)?,
            "potential" => self.potential.kind = Some(v.to_string()),
            "potential_value" => self.potential.value = Some(parse_num(line, key, v)?),
            "potential_seed" => self.potential.seed = Some(parse_num(line, key, v)?),
            "potential_norm" => self.potential.norm = Some(parse_num(line, key, v)?),
            "potential_bandwidth" => self.potential.bandwidth = Some(parse_num(line, key, v)?),
            "initial" => self.initial.kind = Some(v.to_string()),
            "initial_center" => self.initial.center = Some(parse_vec(line, key, v)?),
            "initial_width" => self.initial.width = Some(parse_num(line, key, v)?),
            "initial_seed" => self.initial.seed = Some(parse_num(line, key, v)?),
            "initial_bandwidth" => self.initial.bandwidth = Some(parse_num(line, key, v)?),
            "initial_envelope" => self.initial.envelope = Some(parse_num(line, key, v)?),
            "r1" => s.r1 = parse_num(line, key, v)?,
            "r2" => s.r2 = parse_num(line, key, v)?,
            "omega" => self.omega_kind = Some(v.to_string()),
            "omega_radius" => self.omega_radius = Some(parse_num(line, key, v)?),
            "E" => {
                s.e = v.parse().map_err(|e| ConfigError::new(line, key, format!("{e}")))?;
                self.e_set = true;
            }
            "x0" => s.x0 = parse_vec(line, key, v)?,
            "r" => s.r = parse_num(line, key, v)?,
            "R" => s.big_r = parse_num(line, key, v)?,
            "delta" => s.delta = parse_num(line, key, v)?,
            "lambda" => s.lambda = Some(parse_num(line, key, v)?),
            "tau1" => s.tau1 = parse_num(line, key, v)?,
            "tau2" => s.tau2 = parse_num(line, key, v)?,
            "l" => s.density_point = Some(parse_num(line, key, v)?),
            "depth" => s.depth = parse_num(line, key, v)?,
            "epsilon" => s.epsilon = parse_num(line, key, v)?,
            "cg_tol" => s.cg_tol = parse_num(line, key, v)?,
            "cg_max_iters" => s.cg_max_iters = parse_num(line, key, v)?,
            "sweep_norms" => s.sweep_norms = parse_vec(line, key, v)?,
            "sweep_seeds" => s.sweep_seeds = parse_num(line, key, v)?,
            "export" => s.export = parse_bool(line, key, v)?,
            _ => return Err(ConfigError::new(line, key, "unknown key")),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Scenario, ConfigError> {
        let line = self.scenario.line;
        if !self.task_set {
            return Err(ConfigError::new(line, "task", format!("scenario `{}` has no task", self.scenario.id)));
        }
        let dim = self.scenario.dim;
        if !self.e_set {
            self.scenario.e = TimeSet::interval(0.0, self.scenario.horizon)
                .map_err(|e| ConfigError::new(self.scenario.line_of("T"), "T", e.to_string()))?;
        }
        if !self.scenario.key_lines.iter().any(|(k, _)| k == "x0") {
            self.scenario.x0 = vec![0.0; dim];
        }

        let p = &self.potential;
        let pl = self.scenario.line_of("potential");
        self.scenario.potential = match p.kind.as_deref().unwrap_or("zero") {
            "zero" => PotentialSpec::Zero,
            "constant" => PotentialSpec::Constant(
                p.value.ok_or_else(|| ConfigError::new(pl, "potential_value", "required for a constant potential"))?,
            ),
            "random" => PotentialSpec::Random {
                seed: p.seed.ok_or_else(|| ConfigError::new(pl, "potential_seed", "required for a random potential"))?,
                norm: p.norm.ok_or_else(|| ConfigError::new(pl, "potential_norm", "required for a random potential"))?,
                bandwidth: p.bandwidth.unwrap_or(2.0),
            },
            other => return Err(ConfigError::new(pl, "potential", format!("expected zero, constant or random, got `{other}`"))),
        };

        let i = &self.initial;
        let il = self.scenario.line_of("initial");
        let center = i.center.clone().unwrap_or_else(|| vec![0.0; dim]);
        self.scenario.initial = match i.kind.as_deref().unwrap_or("gaussian") {
            "gaussian" => InitialSpec::Gaussian { center, width: i.width.unwrap_or(0.5) },
            "bump" => InitialSpec::Bump { center, width: i.width.unwrap_or(0.5) },
            "random" => InitialSpec::Random {
                seed: i.seed.ok_or_else(|| ConfigError::new(il, "initial_seed", "required for random initial data"))?,
                bandwidth: i.bandwidth.unwrap_or(2.0),
                envelope: i.envelope.unwrap_or(0.6),
            },
            other => return Err(ConfigError::new(il, "initial", format!("expected gaussian, bump or random, got `{other}`"))),
        };

        let ol = self.scenario.line_of("omega");
        self.scenario.omega = match self.omega_kind.as_deref().unwrap_or("min_ball") {
            "min_ball" => OmegaSpec::MinBall,
            "ball" => OmegaSpec::Ball(
                self.omega_radius.ok_or_else(|| ConfigError::new(ol, "omega_radius", "required for omega = ball"))?,
            ),
            other => return Err(ConfigError::new(ol, "omega", format!("expected min_ball or ball, got `{other}`"))),
        };
        Ok(self.scenario)
    }
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v).trim()
}

/// Parses a scenario file. Ids must be unique.
pub fn parse_config(text: &str) -> Result<Vec<Scenario>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<Section> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(header) = body.strip_prefix('[') {
            let inner = header
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(line, "section", "missing closing `]`"))?
                .trim();
            let id = inner.strip_prefix("scenario").map(str::trim).unwrap_or(inner);
            if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == ',' || c == '/') {
                return Err(ConfigError::new(line, "section", format!("invalid scenario id `{id}`")));
            }
            if !seen.insert(id.to_string()) {
                return Err(ConfigError::new(line, "section", format!("duplicate scenario id `{id}`")));
            }
            if let Some(done) = current.take() {
                out.push(done.finish()?);
            }
            current = Some(Section {
                scenario: Scenario::defaults(id.to_string(), line),
                task_set: false,
                e_set: false,
                potential: RawPotential::default(),
                initial: RawInitial::default(),
                omega_kind: None,
                omega_radius: None,
            });
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, body, "expected `key = value`"))?;
        let key = key.trim();
        let section = current
            .as_mut()
            .ok_or_else(|| ConfigError::new(line, key, "key outside of a [scenario <id>] section"))?;
        if section.scenario.key_lines.iter().any(|(k, _)| k == key) {
            return Err(ConfigError::new(line, key, "key set twice"));
        }
        section.set(line, key, unquote(value))?;
        section.scenario.key_lines.push((key.to_string(), line));
    }
    if let Some(done) = current.take() {
        out.push(done.finish()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_has_no_scenarios() {
        assert!(parse_config("# nothing\n\n").unwrap().is_empty());
    }

    #[test]
    fn parses_sections_and_defaults() {
        let text = "[scenario a]\ntask = observability\nE = \"(0,0.25)+(0.5,1)\"\nM = 129\n\n[b]\ntask = solve\ndim = 2\n";
        let s = parse_config(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].task, Task::Observability);
        assert_eq!(s[0].points, 129);
        assert_eq!(s[0].e.intervals(), &[(0.0, 0.25), (0.5, 1.0)]);
        assert_eq!(s[1].id, "b");
        assert_eq!(s[1].x0, vec![0.0, 0.0]);
        assert_eq!(s[1].e.intervals(), &[(0.0, 1.0)]);
        assert_eq!(s[1].line, 6);
    }

    #[test]
    fn potential_and_initial_kinds() {
        let text = "[a]\ntask = solve\npotential = random\npotential_seed = 4\npotential_norm = 5\ninitial = random\ninitial_seed = 9\n";
        let s = &parse_config(text).unwrap()[0];
        assert_eq!(s.potential, PotentialSpec::Random { seed: 4, norm: 5.0, bandwidth: 2.0 });
        assert!(matches!(s.initial, InitialSpec::Random { seed: 9, .. }));
    }

    #[test]
    fn errors_carry_lines_and_fields() {
        let err = parse_config("[a]\ntask = solve\nbogus = 1\n").unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (3, "bogus"));
        let err = parse_config("[a]\ntask = solve\n[a]\ntask = solve\n").unwrap_err();
        assert_eq!(err.line, 3);
        let err = parse_config("[a]\nM = 10\n").unwrap_err();
        assert_eq!(err.field, "task");
        let err = parse_config("[a]\ntask = solve\nM = x\n").unwrap_err();
        assert_eq!((err.line, err.field.as_str()), (3, "M"));
        let err = parse_config("task = solve\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_config("[a]\ntask = solve\npotential = random\n").unwrap_err();
        assert_eq!(err.field, "potential_seed");
    }
}
