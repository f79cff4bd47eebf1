//! Radial C² cutoff built from the quintic smoothstep.

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};

/// `η(x) = 1 − P((|x − x0| − r_in) / (r_out − r_in))` with
/// `P(τ) = 10τ³ − 15τ⁴ + 6τ⁵` on `[0,1]`, so `η = 1` on `B_{r_in}` and
/// `η = 0` outside `B_{r_out}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticCutoff {
    center: Vec<f64>,
    r_in: f64,
    r_out: f64,
}

/// Largest slope of the smoothstep, attained at `τ = 1/2`.
const SLOPE_MAX: f64 = 1.875;

impl QuinticCutoff {
    pub fn new(center: &[f64], r_in: f64, r_out: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) {
            return Err(Error::InvalidArgument(format!("cutoff radii need 0 < r_in < r_out, got {r_in}, {r_out}")));
        }
        Ok(Self { center: center.to_vec(), r_in, r_out })
    }

    /// The cutoff used to pass from `B_r` to `B_{(1+δ)r}`: plateau up to
    /// `(1 + 3δ/4) r`, zero from `(1 + δ) r`.
    pub fn for_ball(center: &[f64], r: f64, delta: f64) -> Result<Self> {
        Self::new(center, (1.0 + 0.75 * delta) * r, (1.0 + delta) * r)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn inner_radius(&self) -> f64 {
        self.r_in
    }

    pub fn outer_radius(&self) -> f64 {
        self.r_out
    }

    fn tau(&self, s: f64) -> f64 {
        ((s - self.r_in) / (self.r_out - self.r_in)).clamp(0.0, 1.0)
    }

    /// Profile `ρ(s)` with `η(x) = ρ(|x − x0|)`.
    pub fn radial(&self, s: f64) -> f64 {
        let t = self.tau(s);
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }

    pub fn radial_d1(&self, s: f64) -> f64 {
        let t = self.tau(s);
        -30.0 * t * t * (1.0 - t) * (1.0 - t) / (self.r_out - self.r_in)
    }

    pub fn radial_d2(&self, s: f64) -> f64 {
        let t = self.tau(s);
        let w = self.r_out - self.r_in;
        -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w)
    }

    fn dist(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(self.dist(x))
    }

    /// `∇η(x)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.dist(x);
        if s == 0.0 {
            return vec![0.0; x.len()];
        }
        let d = self.radial_d1(s) / s;
        x.iter().zip(&self.center).map(|(a, b)| d * (a - b)).collect()
    }

    /// `Δη(x) = ρ'' + (N − 1) ρ' / s`.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let s = self.dist(x);
        let mut v = self.radial_d2(s);
        if x.len() > 1 && s > 0.0 {
            v += (x.len() - 1) as f64 * self.radial_d1(s) / s;
        }
        v
    }

    /// `||∇η||_∞ = 1.875 / (r_out − r_in)`.
    pub fn grad_sup(&self) -> f64 {
        SLOPE_MAX / (self.r_out - self.r_in)
    }

    /// `4 ||∇η||_∞²`.
    pub fn c4(&self) -> f64 {
        4.0 * self.grad_sup().powi(2)
    }

    pub fn field(&self, grid: Grid) -> Result<ScalarField> {
        if self.center.len() != grid.dim() {
            return Err(Error::InvalidArgument("cutoff center dimension mismatch".into()));
        }
        ScalarField::from_fn(grid, |x| self.value(x))
    }
}
