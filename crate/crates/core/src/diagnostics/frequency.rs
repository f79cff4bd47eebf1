//! Gaussian-weighted frequency function `N_{λ,r}(t)` and the energy identity
//! behind it.

use crate::error::{Error, Result};
use crate::field::{csum, grad_norm_sq, Grid, ScalarField};
use crate::solver::Trajectory;

/// `G_λ(x,t) = (T − t + λ)^{−N/2} exp(−|x − x0|² / (4 (T − t + λ)))`.
pub fn gaussian_weight(x: &[f64], t: f64, lambda: f64, x0: &[f64], horizon: f64, dim: usize) -> f64 {
    let s = horizon - t + lambda;
    let d2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum();
    s.powf(-(dim as f64) / 2.0) * (-d2 / (4.0 * s)).exp()
}

/// Denominators below this are treated as zero.
pub const DENOMINATOR_GUARD: f64 = 1e-300;

/// Relative size above which a field counts as not vanishing on `∂B_r`.
pub const BOUNDARY_VANISH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySample {
    pub t: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrace {
    pub x0: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub samples: Vec<FrequencySample>,
}

impl FrequencyTrace {
    /// `(T − t + λ) N(t)` per sample.
    pub fn scaled_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| (self.horizon - s.t + self.lambda) * s.n).collect()
    }

    /// Largest single-step increase of `(T − t + λ) N(t)` (0 if nonincreasing).
    pub fn max_scaled_increase(&self) -> f64 {
        self.scaled_values().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// CSV `t,numerator,denominator,N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,numerator,denominator,N\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.numerator, s.denominator, s.n));
        }
        out
    }
}

struct BallWeights {
    nodes: Vec<usize>,
    shell: Vec<usize>,
}

fn ball_weights(grid: &Grid, x0: &[f64], r: f64) -> Result<BallWeights> {
    if x0.len() != grid.dim() {
        return Err(Error::InvalidArgument("ball center dimension mismatch".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let mask = grid.ball_mask(x0, r)?;
    let nodes: Vec<usize> = (0..grid.node_count()).filter(|&k| mask[k]).collect();
    if nodes.is_empty() {
        return Err(Error::BallOutsideDomain { center: x0.to_vec(), radius: r });
    }
    let inner = (r - 1.5 * grid.spacing()).max(0.0);
    let shell = nodes.iter().copied().filter(|&k| grid.dist2(k, x0).sqrt() > inner).collect();
    Ok(BallWeights { nodes, shell })
}

/// `(∫_B |∇u|² G, ∫_B u² G, ∫_B u s G)` at one time.
fn weighted_integrals(
    field: &ScalarField,
    grad: &ScalarField,
    source: Option<&ScalarField>,
    ball: &BallWeights,
    x0: &[f64],
    t: f64,
    lambda: f64,
    horizon: f64,
) -> (f64, f64, f64) {
    let grid = field.grid();
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let u = field.values();
    let g2 = grad.values();
    let weight = |k: usize| {
        let c = grid.coords(k);
        gaussian_weight(&c[..dim], t, lambda, x0, horizon, dim)
    };
    let ws: Vec<f64> = ball.nodes.iter().map(|&k| weight(k)).collect();
    let num = vol * csum(ball.nodes.iter().zip(&ws).map(|(&k, w)| g2[k] * w));
    let den = vol * csum(ball.nodes.iter().zip(&ws).map(|(&k, w)| u[k] * u[k] * w));
    let src = source.map_or(0.0, |s| {
        let sv = s.values();
        vol * csum(ball.nodes.iter().zip(&ws).map(|(&k, w)| u[k] * sv[k] * w))
    });
    (num, den, src)
}

fn check_vanishing(field: &ScalarField, ball: &BallWeights, t: f64) -> Result<()> {
    let u = field.values();
    let inside = ball.nodes.iter().map(|&k| u[k].abs()).fold(0.0, f64::max);
    if inside == 0.0 {
        return Ok(());
    }
    let edge = ball.shell.iter().map(|&k| u[k].abs()).fold(0.0, f64::max);
    let relative = edge / inside;
    if relative > BOUNDARY_VANISH_TOL {
        return Err(Error::NotVanishingOnBoundary { t, relative });
    }
    Ok(())
}

/// `N_{λ,r}(t)` at every trajectory time, with `T` the final trajectory time.
///
/// The field must vanish near `∂B_r(x0)`; multiply by a cutoff first when it
/// does not.
pub fn frequency_trace(traj: &Trajectory, x0: &[f64], r: f64, lambda: f64) -> Result<FrequencyTrace> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let ball = ball_weights(traj.grid(), x0, r)?;
    let horizon = traj.final_time();
    let mut samples = Vec::with_capacity(traj.times().len());
    let mut skipped = Vec::new();
    for (f, &t) in traj.fields().iter().zip(traj.times()) {
        check_vanishing(f, &ball, t)?;
        let grad = grad_norm_sq(f);
        let (numerator, denominator, _) = weighted_integrals(f, &grad, None, &ball, x0, t, lambda, horizon);
        if !(denominator >= DENOMINATOR_GUARD) {
            skipped.push(t);
            continue;
        }
        samples.push(FrequencySample { t, numerator, denominator, n: numerator / denominator });
    }
    if !skipped.is_empty() {
        return Err(Error::DegenerateDenominator { skipped });
    }
    Ok(FrequencyTrace { x0: x0.to_vec(), r, lambda, horizon, samples })
}

/// Derivative of uniformly sampled values: centered inside, second-order
/// one-sided at both ends.
pub fn sampled_derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => vec![(values[1] - values[0]) / dt; 2],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
                } else if k == n - 1 {
                    (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt)
                } else {
                    (values[k + 1] - values[k - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Per-time residual `|D'(t) + ∫|∇u|²G − ∫u s G|` with `D = ½∫_B u² G` and
/// `s = (∂t − Δ) u` supplied on the same time grid.
pub fn frequency_identity_residual(
    traj: &Trajectory,
    x0: &[f64],
    r: f64,
    lambda: f64,
    source: &Trajectory,
) -> Result<Vec<(f64, f64)>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if source.grid() != traj.grid() || source.times().len() != traj.times().len() {
        return Err(Error::GridMismatch);
    }
    let ball = ball_weights(traj.grid(), x0, r)?;
    let horizon = traj.final_time();
    let mut halves = Vec::with_capacity(traj.times().len());
    let mut rest = Vec::with_capacity(traj.times().len());
    for ((f, s), &t) in traj.fields().iter().zip(source.fields()).zip(traj.times()) {
        check_vanishing(f, &ball, t)?;
        let grad = grad_norm_sq(f);
        let (num, den, src) = weighted_integrals(f, &grad, Some(s), &ball, x0, t, lambda, horizon);
        halves.push(0.5 * den);
        rest.push(num - src);
    }
    let d = sampled_derivative(&halves, traj.dt());
    Ok(traj.times().iter().zip(d.iter().zip(&rest)).map(|(&t, (dv, rv))| (t, (dv + rv).abs())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::QuinticCutoff;
    use crate::field::Grid;
    use crate::potential::Potential;
    use crate::solver::{solve, SolverConfig};

    #[test]
    fn weight_examples() {
        assert_eq!(gaussian_weight(&[0.3], 1.0, 0.25, &[0.3], 1.0, 1), 2.0);
        let v = gaussian_weight(&[1.3], 1.0, 0.25, &[0.3], 1.0, 1);
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let w = gaussian_weight(&[0.1 * i as f64], 0.0, 0.5, &[0.0], 1.0, 1);
            assert!(w < prev || i == 0);
            prev = w;
        }
        assert!((gaussian_weight(&[0.0, 0.0], 0.0, 99.0, &[0.0, 0.0], 1.0, 2) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn weight_at_final_time_is_normalized() {
        for (x, l) in [(0.0, 0.1), (0.7, 0.3), (-1.2, 2.0)] {
            let w = gaussian_weight(&[x], 3.0, l, &[0.0], 3.0, 1);
            assert_eq!(w, l.powf(-0.5) * (-x * x / (4.0 * l)).exp());
        }
    }

    fn bump_traj(grid: Grid, times: Vec<f64>, scale: impl Fn(f64) -> f64) -> Trajectory {
        let cut = QuinticCutoff::new(&[0.0], 0.3, 0.8).unwrap();
        let fields = times
            .iter()
            .map(|&t| ScalarField::from_fn(grid, |x| scale(t) * (1.0 + x[0]) * cut.value(x)).unwrap())
            .collect();
        Trajectory::new(grid, times, fields, 0.0).unwrap()
    }

    #[test]
    fn zero_field_is_degenerate() {
        let g = Grid::new(1, 2.0, 101).unwrap();
        let traj = bump_traj(g, vec![0.0, 0.5, 1.0], |_| 0.0);
        match frequency_trace(&traj, &[0.0], 1.0, 0.1) {
            Err(Error::DegenerateDenominator { skipped }) => assert_eq!(skipped.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separable_field_has_constant_ratio_only_through_weight() {
        // u = c(t) w(x): N(t) depends on t only through G; compare with direct quadrature
        let g = Grid::new(1, 2.0, 201).unwrap();
        let traj = bump_traj(g, vec![0.0, 0.5, 1.0], |t| 1.0 + 3.0 * t);
        let trace = frequency_trace(&traj, &[0.0], 1.0, 0.2).unwrap();
        let still = bump_traj(g, vec![0.0, 0.5, 1.0], |_| 1.0);
        let ref_trace = frequency_trace(&still, &[0.0], 1.0, 0.2).unwrap();
        for (a, b) in trace.samples.iter().zip(&ref_trace.samples) {
            assert!((a.n - b.n).abs() <= 1e-10 * b.n.abs());
        }
    }

    #[test]
    fn non_vanishing_field_is_rejected() {
        let g = Grid::new(1, 2.0, 101).unwrap();
        let f = ScalarField::from_fn(g, |x| (1.0 - x[0] * x[0] / 4.0).max(0.0)).unwrap();
        let traj = Trajectory::new(g, vec![0.0, 1.0], vec![f.clone(), f], 0.0).unwrap();
        assert!(matches!(frequency_trace(&traj, &[0.0], 1.0, 0.1), Err(Error::NotVanishingOnBoundary { .. })));
    }

    #[test]
    fn derivative_is_exact_for_quadratics() {
        let v: Vec<f64> = (0..6).map(|k| (0.1 * k as f64).powi(2)).collect();
        let d = sampled_derivative(&v, 0.1);
        for (k, dv) in d.iter().enumerate() {
            assert!((dv - 0.2 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_identity_residual_vanishes() {
        let g = Grid::new(1, 2.0, 101).unwrap();
        let f = ScalarField::zeros(g);
        let traj = solve(&f, &Potential::zero(), 1.0, 4, &SolverConfig::default()).unwrap();
        let res = frequency_identity_residual(&traj, &[0.0], 1.0, 0.5, &traj).unwrap();
        assert!(res.iter().all(|&(_, r)| r == 0.0));
    }
}
