use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("no grid node lies in the ball of radius {radius} around {center:?}")]
    BallOutsideDomain { center: Vec<f64>, radius: f64 },

    #[error("potential sample {value} at x={x:?}, t={t} exceeds declared sup-norm {sup_norm}")]
    PotentialBoundViolated {
        value: f64,
        sup_norm: f64,
        x: Vec<f64>,
        t: f64,
    },

    #[error("field does not vanish on the box boundary (max boundary value {boundary_max}, field max {field_max})")]
    BoundaryNotZero { boundary_max: f64, field_max: f64 },

    #[error("linear solve did not reach tolerance after {iters} iterations (relative residual {residual:e})")]
    LinearSolveDiverged { iters: usize, residual: f64 },

    #[error("{fraction:e} of the squared mass lies within 3h of the box boundary at t={t}; enlarge the box")]
    MassAtBoundary { t: f64, fraction: f64 },

    #[error("2*r2 = {side} does not divide the box side {box_side}")]
    NonCommensurate { side: f64, box_side: f64 },

    #[error("cell {cell} violates the sandwich B_r1(x_i) <= omega_i <= B_r2(x_i)")]
    SandwichViolated { cell: usize },

    #[error("time set has zero measure")]
    EmptyTimeSet,

    #[error("no certified l1 found; best candidate l1={best_l1} first violates the gap bound at m={first_violation}")]
    TelescopeSearchFailed { best_l1: f64, first_violation: usize },

    #[error("weighted mass below guard at times {skipped:?}")]
    DegenerateDenominator { skipped: Vec<f64> },

    #[error("field does not vanish on the ball boundary at t={t} (relative value {relative:e})")]
    NotVanishingOnBoundary { t: f64, relative: f64 },

    #[error("denominator integral vanishes ({value:e})")]
    EmptyDenominator { value: f64 },

    #[error("property {which} violated: {detail}")]
    PropertyViolated { which: String, detail: String },

    #[error("exponent undefined: scaled cylinder term {scaled} does not dominate small-ball term {small}")]
    DegenerateScale { scaled: f64, small: f64 },

    #[error("dual iteration stalled after {iters} iterations (gradient reduced only {reduction}x); increase the penalization")]
    CGStalled { iters: usize, reduction: f64 },

    #[error("initial state has {outside:e} of its squared mass outside B_r(x0)")]
    SupportViolated { outside: f64 },

    #[error("least-squares fit failed: {0}")]
    FitFailed(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
