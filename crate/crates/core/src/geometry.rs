//! Equidistributed observation sets, density points and the telescoping
//! time sequence.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::timeset::TimeSet;

/// Lattice of cubes `Q_{r2}(x_i)` of side `2 r2` covering the grid box.
#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    grid: Grid,
    r2: f64,
    per_axis: usize,
    centers: Vec<[f64; 2]>,
}

/// Splits the box into `(L / r2)^dim` cubes of side `2 r2`.
pub fn build_tiling(grid: Grid, r2: f64) -> Result<Tiling> {
    if !(r2 > 0.0 && r2.is_finite()) {
        return Err(Error::InvalidArgument(format!("r2 must be positive, got {r2}")));
    }
    let l = grid.half_length();
    let ratio = l / r2;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio {
        return Err(Error::NonCommensurate { side: 2.0 * r2, box_side: 2.0 * l });
    }
    let n = n as usize;
    let axis: Vec<f64> = (0..n).map(|j| -l + r2 * (2 * j + 1) as f64).collect();
    let centers = if grid.dim() == 1 {
        axis.iter().map(|&c| [c, 0.0]).collect()
    } else {
        axis.iter().flat_map(|&cx| axis.iter().map(move |&cy| [cx, cy])).collect()
    };
    Ok(Tiling { grid, r2, per_axis: n, centers })
}

impl Tiling {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn cells_per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        &self.centers[cell][..self.grid.dim()]
    }

    fn axis_cell(&self, i: usize) -> usize {
        // nodes on a shared face go to the lower cell
        let m1 = self.grid.points_per_axis() - 1;
        let up = (i * self.per_axis).div_ceil(m1);
        up.max(1) - 1
    }

    /// Index of the unique cube that owns node `k`.
    pub fn cell_of(&self, k: usize) -> usize {
        let idx = self.grid.multi_index(k);
        if self.grid.dim() == 1 {
            self.axis_cell(idx[0])
        } else {
            self.axis_cell(idx[0]) * self.per_axis + self.axis_cell(idx[1])
        }
    }

    /// Number of nodes owned by each cube.
    pub fn cell_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for k in 0..self.grid.node_count() {
            counts[self.cell_of(k)] += 1;
        }
        counts
    }
}

/// Shape of the per-cell observation set `ω_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaShape {
    /// `ω_i = B_{r1}(x_i)`.
    MinBall,
    /// `ω_i = B_ρ(x_i)` with `r1 ≤ ρ ≤ r2`.
    Ball(f64),
    /// One node mask per cell.
    Explicit(Vec<Vec<bool>>),
}

/// `ω = ∪ ω_i` with `B_{r1}(x_i) ⊆ ω_i ⊆ B_{r2}(x_i)` in every cube.
#[derive(Debug, Clone, PartialEq)]
pub struct EquidistributedSet {
    tiling: Tiling,
    r1: f64,
    cells: Vec<Vec<usize>>,
    mask: Vec<bool>,
}

pub fn check_radii(r1: f64, r2: f64) -> Result<()> {
    if !(r1 > 0.0 && r1 < r2 && r2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "observation radii r1={r1}, r2={r2}: requires 0 < r1 < r2 < +inf"
        )));
    }
    Ok(())
}

/// Builds and validates the per-cell sets on a tiling of cube half-side `r2`.
pub fn build_omega(tiling: &Tiling, r1: f64, shape: OmegaShape) -> Result<EquidistributedSet> {
    let r2 = tiling.r2();
    check_radii(r1, r2)?;
    let grid = *tiling.grid();
    let n = grid.node_count();
    let mut cells = Vec::with_capacity(tiling.len());
    let mut mask = vec![false; n];
    for cell in 0..tiling.len() {
        let c = tiling.center(cell);
        let inner = grid.ball_mask(c, r1)?;
        let outer = grid.ball_mask(c, r2)?;
        let own = match &shape {
            OmegaShape::MinBall => inner.clone(),
            OmegaShape::Ball(rho) => {
                if !(*rho >= r1 && *rho <= r2) {
                    return Err(Error::InvalidArgument(format!("ball radius {rho} must lie in [r1, r2] = [{r1}, {r2}]")));
                }
                grid.ball_mask(c, *rho)?
            }
            OmegaShape::Explicit(masks) => {
                let m = masks.get(cell).ok_or(Error::SandwichViolated { cell })?;
                if m.len() != n {
                    return Err(Error::SandwichViolated { cell });
                }
                m.clone()
            }
        };
        let ok = (0..n).all(|k| (!inner[k] || own[k]) && (!own[k] || outer[k]));
        if !ok {
            return Err(Error::SandwichViolated { cell });
        }
        let nodes: Vec<usize> = (0..n).filter(|&k| own[k]).collect();
        for &k in &nodes {
            mask[k] = true;
        }
        cells.push(nodes);
    }
    Ok(EquidistributedSet { tiling: tiling.clone(), r1, cells, mask })
}

impl EquidistributedSet {
    pub fn tiling(&self) -> &Tiling {
        &self.tiling
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.tiling.r2()
    }

    pub fn grid(&self) -> &Grid {
        self.tiling.grid()
    }

    /// Nodes of `ω_i`.
    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        &self.cells[cell]
    }

    /// Node mask of `ω`.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// CSV `cell_index,center_x[,center_y],node_index`, one row per node of each `ω_i`.
    pub fn to_csv(&self) -> String {
        let dim = self.grid().dim();
        let mut out = String::from(if dim == 1 { "cell_index,center_x,node_index\n" } else { "cell_index,center_x,center_y,node_index\n" });
        for (i, nodes) in self.cells.iter().enumerate() {
            let c = self.tiling.center(i);
            for k in nodes {
                if dim == 1 {
                    let _ = writeln!(out, "{i},{},{k}", c[0]);
                } else {
                    let _ = writeln!(out, "{i},{},{},{k}", c[0], c[1]);
                }
            }
        }
        out
    }
}

/// Midpoint of the longest component of `E` (first one on ties).
pub fn find_density_point(e: &TimeSet) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(a, b) in e.intervals() {
        if best.is_none_or(|(ba, bb)| b - a > bb - ba) {
            best = Some((a, b));
        }
    }
    match best {
        Some((a, b)) if e.measure() > 0.0 => Ok(0.5 * (a + b)),
        _ => Err(Error::EmptyTimeSet),
    }
}

/// `α = θ / (1 − θ)`.
pub fn alpha_from_theta(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0,1), got {theta}")));
    }
    Ok(theta / (1.0 - theta))
}

/// `κ = √((α + 2) / (α + 1))`.
pub fn kappa_from_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    Ok(((alpha + 2.0) / (alpha + 1.0)).sqrt())
}

/// Gap and `E`-measure of `(l_{m+1}, l_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopeStep {
    pub m: usize,
    pub gap: f64,
    pub measure: f64,
}

impl TelescopeStep {
    /// `3 |E ∩ (l_{m+1}, l_m)| − (l_m − l_{m+1})`.
    pub fn slack(&self) -> f64 {
        3.0 * self.measure - self.gap
    }
}

/// `l_m = l + κ^{−(m−1)} (l1 − l)` with its certificate for `m ≤ M_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeSequence {
    pub l: f64,
    pub l1: f64,
    pub kappa: f64,
    pub depth: usize,
    pub certificate: Vec<TelescopeStep>,
}

impl TelescopeSequence {
    pub fn term(&self, m: usize) -> f64 {
        telescope_term(self.l, self.l1, self.kappa, m)
    }

    pub fn min_slack(&self) -> f64 {
        self.certificate.iter().map(TelescopeStep::slack).fold(f64::INFINITY, f64::min)
    }
}

fn telescope_term(l: f64, l1: f64, kappa: f64, m: usize) -> f64 {
    l + kappa.powi(-(m as i32 - 1)) * (l1 - l)
}

/// Certificate for one candidate `l1`; `Err(m)` names the first violating step.
pub fn certify(e: &TimeSet, l: f64, l1: f64, kappa: f64, horizon: f64, depth: usize) -> std::result::Result<Vec<TelescopeStep>, usize> {
    let tol = 1e-14 * horizon;
    let mut steps = Vec::with_capacity(depth);
    for m in 1..=depth {
        let hi = telescope_term(l, l1, kappa, m);
        let lo = telescope_term(l, l1, kappa, m + 1);
        let step = TelescopeStep { m, gap: hi - lo, measure: e.measure_in(lo, hi) };
        if step.slack() < -tol {
            return Err(m);
        }
        steps.push(step);
    }
    Ok(steps)
}

/// Candidate values of `l1`: `l + D·10^{−j/64}`, `j = 1..=384`, descending.
pub fn telescope_candidates(l: f64, reach: f64) -> impl Iterator<Item = f64> {
    (1..=384).map(move |j| l + reach * 10f64.powf(-(j as f64) / 64.0))
}

/// Searches `l1 ∈ (l, T)` and returns the first candidate whose sequence is
/// certified up to `depth`.
pub fn telescope(e: &TimeSet, l: f64, kappa: f64, horizon: f64, depth: usize) -> Result<TelescopeSequence> {
    if !(kappa > 1.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must exceed 1, got {kappa}")));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    if e.measure() <= 0.0 {
        return Err(Error::EmptyTimeSet);
    }
    if !(l > 0.0 && l < horizon) {
        return Err(Error::InvalidArgument(format!("l={l} must lie in (0, {horizon})")));
    }
    let end = e
        .intervals()
        .iter()
        .find(|&&(a, b)| a < l && l < b)
        .map(|&(_, b)| b)
        .ok_or_else(|| Error::InvalidArgument(format!("l={l} is not interior to a component of E")))?;
    let reach = (horizon - l).min(end - l);
    let mut best = (f64::NAN, 0usize);
    for l1 in telescope_candidates(l, reach) {
        match certify(e, l, l1, kappa, horizon, depth) {
            Ok(certificate) => return Ok(TelescopeSequence { l, l1, kappa, depth, certificate }),
            Err(m) if m > best.1 => best = (l1, m),
            Err(_) => {}
        }
    }
    Err(Error::TelescopeSearchFailed { best_l1: best.0, first_violation: best.1 })
}
