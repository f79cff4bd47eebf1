use std::f64::consts::PI;

use obslab_core::field::{Grid, ScalarField};
use obslab_core::potential::{band_limited_field, gaussian_field, seeded_random_potential, Potential};
use obslab_core::solver::{solve, solve_adjoint, solve_controlled, solve_forced, source_pairing, SolverConfig, StepControl};
use obslab_core::timeset::{step_midpoint, TimeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_norm(width: f64, t: f64) -> f64 {
    // ||exp(-x²/(2w²)) evolved to time t||² = w² √π / √(w² + 2t)
    (width * width * PI.sqrt() / (width * width + 2.0 * t).sqrt()).sqrt()
}

#[test]
fn narrow_gaussian_norm_matches_closed_form() {
    let g = Grid::new(1, 8.0, 2049).unwrap();
    let w = 0.1;
    let f = gaussian_field(g, &[0.0], w).unwrap();
    let traj = solve(&f, &Potential::zero(), 1.0, 1000, &SolverConfig::default()).unwrap();
    let rel = (traj.terminal().norm() - gaussian_norm(w, 1.0)).abs() / gaussian_norm(w, 1.0);
    assert!(rel < 1e-3, "rel={rel}");
}

#[test]
fn adjoint_matches_backward_kernel() {
    let g = Grid::new(1, 8.0, 1025).unwrap();
    let w = 0.5;
    let horizon = 1.0;
    let phi_t = gaussian_field(g, &[0.3], w).unwrap();
    let adj = solve_adjoint(&phi_t, &Potential::zero(), horizon, 200, &SolverConfig::default()).unwrap();
    for (k, f) in adj.fields().iter().enumerate().step_by(50) {
        let s = horizon - adj.times()[k];
        let v = w * w + 2.0 * s;
        let exact = ScalarField::from_fn(g, |x| w / v.sqrt() * (-(x[0] - 0.3).powi(2) / (2.0 * v)).exp()).unwrap();
        let err = f.combine(1.0, &exact, -1.0).unwrap().norm() / exact.norm();
        assert!(err < 1e-3, "k={k} err={err}");
    }
}

#[test]
fn adjoint_is_reversed_forward_for_static_potential() {
    let g = Grid::new(1, 4.0, 129).unwrap();
    let a = Potential::from_fn(2.0, |x, _| 2.0 * (x[0]).cos()).unwrap().time_independent();
    let phi_t = gaussian_field(g, &[0.0], 0.4).unwrap();
    let cfg = SolverConfig::default().without_boundary_guard();
    let adj = solve_adjoint(&phi_t, &a, 0.5, 40, &cfg).unwrap();
    let fwd = solve(&phi_t, &a, 0.5, 40, &cfg).unwrap().reversed();
    for (x, y) in adj.fields().iter().zip(fwd.fields()) {
        assert_eq!(x.values(), y.values());
    }
}

fn random_step_control(grid: Grid, steps: usize, seed: u64) -> StepControl {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..steps)
        .map(|_| (0..grid.node_count()).map(|k| if grid.is_boundary(k) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect())
        .collect();
    StepControl::new(grid, rows).unwrap()
}

fn duality_gap(dim: usize, m: usize, seed: u64) -> f64 {
    let g = Grid::new(dim, 4.0, m).unwrap();
    let horizon = 0.4;
    let steps = 16;
    let b = seeded_random_potential(seed, 5.0, 1.5, dim, 2.0).unwrap();
    let y0 = band_limited_field(g, seed + 1, 2.0, 0.6).unwrap();
    let phi_t = band_limited_field(g, seed + 2, 2.0, 0.6).unwrap();
    let u = random_step_control(g, steps, seed + 3);
    let center = vec![0.5; dim];
    let mask = g.ball_mask(&center, 1.0).unwrap();
    let e: TimeSet = "(0.05,0.2)+(0.25,0.33)".parse().unwrap();
    let cfg = SolverConfig::default().without_boundary_guard();
    let y = solve_controlled(&y0, &b, &u, &mask, &e, horizon, steps, &cfg).unwrap();
    let phi = solve_adjoint(&phi_t, &b, horizon, steps, &cfg).unwrap();
    let lhs_t = y.terminal().inner(&phi_t).unwrap();
    let lhs_0 = y0.inner(phi.initial()).unwrap();
    let rhs = source_pairing(&u, &mask, &e, &phi, cfg.theta).unwrap();
    let scale = lhs_t.abs() + lhs_0.abs() + rhs.abs();
    ((lhs_t - lhs_0) - rhs).abs() / scale
}

#[test]
fn discrete_duality_holds_to_solver_tolerance() {
    for seed in [1, 7, 19] {
        let d1 = duality_gap(1, 257, seed);
        assert!(d1 < 1e-8, "1D seed {seed}: {d1}");
        let d2 = duality_gap(2, 65, seed);
        assert!(d2 < 1e-8, "2D seed {seed}: {d2}");
    }
}

#[test]
fn zero_control_reproduces_free_solve_bitwise() {
    let g = Grid::new(1, 4.0, 129).unwrap();
    let b = seeded_random_potential(4, 3.0, 1.0, 1, 2.0).unwrap();
    let y0 = gaussian_field(g, &[0.2], 0.4).unwrap();
    let cfg = SolverConfig::default();
    let mask = vec![true; g.node_count()];
    let e = TimeSet::interval(0.0, 1.0).unwrap();
    let free = solve(&y0, &b, 0.5, 32, &cfg).unwrap();
    let ctl = solve_controlled(&y0, &b, &StepControl::zeros(g, 32), &mask, &e, 0.5, 32, &cfg).unwrap();
    assert_eq!(free, ctl);
    let zero = solve_controlled(&ScalarField::zeros(g), &b, &StepControl::zeros(g, 32), &mask, &e, 0.5, 32, &cfg).unwrap();
    assert!(zero.fields().iter().all(|f| f.max_abs() == 0.0));
}

#[test]
fn controlled_terminal_is_duhamel_sum() {
    let g = Grid::new(1, 4.0, 129).unwrap();
    let horizon = 0.5;
    let steps = 20;
    let b = seeded_random_potential(9, 2.0, 1.0, 1, 2.0).unwrap();
    let cfg = SolverConfig::default().without_boundary_guard();
    let mask = g.ball_mask(&[0.5], 0.75).unwrap();
    let e: TimeSet = "(0.1,0.3)+(0.4,0.5)".parse().unwrap();
    let one = ScalarField::from_fn(g, |_| 1.0).unwrap();
    let u = StepControl::constant(&one, steps);
    let y = solve_controlled(&ScalarField::zeros(g), &b, &u, &mask, &e, horizon, steps, &cfg).unwrap();
    assert!(y.terminal().norm() > 0.0);
    let mut total = ScalarField::zeros(g);
    for n in 0..steps {
        let tn = step_midpoint(horizon, steps, n);
        if !e.contains(tn) {
            continue;
        }
        let piece = solve_forced(&ScalarField::zeros(g), &b, horizon, steps, &cfg, |t, out: &mut [f64]| {
            if t == tn {
                for (k, v) in out.iter_mut().enumerate() {
                    *v = if mask[k] { 1.0 } else { 0.0 };
                }
            }
        })
        .unwrap();
        total = total.combine(1.0, piece.terminal(), 1.0).unwrap();
    }
    let rel = y.terminal().combine(1.0, &total, -1.0).unwrap().norm() / total.norm();
    assert!(rel < 1e-6, "rel={rel}");
}

#[test]
fn free_heat_is_dissipative_even_for_huge_steps() {
    let g = Grid::new(1, 4.0, 257).unwrap();
    let h = g.spacing();
    let f = gaussian_field(g, &[0.1], 0.5).unwrap();
    let horizon = 1e3 * h * h * 20.0;
    let traj = solve(&f, &Potential::zero(), horizon, 20, &SolverConfig::default().without_boundary_guard()).unwrap();
    for w in traj.fields().windows(2) {
        assert!(w[1].norm() <= w[0].norm());
    }
}

#[test]
fn growth_bound_for_random_potentials() {
    let g = Grid::new(1, 4.0, 257).unwrap();
    let horizon = 1.0;
    for (seed, norm) in [(0u64, 1.0), (1, 5.0), (2, 20.0)] {
        let a = seeded_random_potential(seed, norm, 2.0, 1, 1.0).unwrap();
        let f = band_limited_field(g, seed, 2.0, 0.6).unwrap();
        let traj = solve(&f, &a, horizon, 100, &SolverConfig::default().without_boundary_guard()).unwrap();
        let n0 = f.norm();
        for (t, field) in traj.times().iter().zip(traj.fields()) {
            assert!(field.norm() <= (norm * t).exp() * n0 * (1.0 + 1e-6), "seed {seed} t={t}");
        }
    }
}
