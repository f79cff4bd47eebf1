//! Log-domain least-squares fits of the two-ball and interpolation constants.

use crate::diagnostics::ledger::{ConstantsLedger, FitRecord};
use crate::diagnostics::reports::{two_ball_exponent, InterpolationData, TwoBallData};
use crate::error::{Error, Result};
use crate::field::csum;

const EXPONENT_FLOOR: f64 = 1e-6;

fn clamp_exponent(v: f64) -> f64 {
    v.clamp(EXPONENT_FLOOR, 1.0 - EXPONENT_FLOOR)
}

/// Solves the normal equations of `min ||X b − y||²` for up to three columns.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = cols.len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = csum(cols[i].iter().zip(&cols[j]).map(|(u, v)| u * v));
        }
        a[i][p] = csum(cols[i].iter().zip(y).map(|(u, v)| u * v));
    }
    // Gaussian elimination with partial pivoting
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[piv][c].abs() < 1e-300 {
            return Err(Error::FitFailed("normal equations are singular".into()));
        }
        a.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c] / a[c][c];
            for k in c..=p {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut x = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = (c + 1..p).map(|k| a[c][k] * x[k]).sum();
        x[c] = (a[c][p] - s) / a[c][c];
    }
    Ok(x)
}

/// Fitted two-ball constants.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBallFit {
    pub c6: f64,
    pub c7: f64,
    pub gamma: f64,
    /// `ln LHS − ln(Ã^γ B^{1−γ})` per scenario; all ≤ 0.
    pub residuals: Vec<f64>,
}

/// Fits `(C6, C7, γ)` so that every scenario satisfies
/// `ln(LHS/B) ≤ γ (E + ln(A/B) + ln C6 + C7/T)`.
///
/// The slope is fitted by least squares and clamped into `(0,1)`; the
/// intercept is then raised until no residual is positive. `C7` is fitted
/// only when `T` varies across the family and is kept nonnegative.
pub fn fit_two_ball(data: &[TwoBallData], c1: f64) -> Result<TwoBallFit> {
    if data.len() < 2 {
        return Err(Error::FitFailed("need at least two scenarios".into()));
    }
    let y: Vec<f64> = data.iter().map(|d| (d.lhs / d.small).ln()).collect();
    let z: Vec<f64> = data
        .iter()
        .map(|d| two_ball_exponent(c1, d.big_r, d.horizon, d.a_norm) + (d.cylinder / d.small).ln())
        .collect();
    let inv_t: Vec<f64> = data.iter().map(|d| 1.0 / d.horizon).collect();
    if y.iter().chain(&z).any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite log quantities".into()));
    }
    let ones = vec![1.0; data.len()];
    let varies = inv_t.iter().any(|&v| (v - inv_t[0]).abs() > 1e-12 * inv_t[0]);
    let mut cols = vec![z.clone(), ones.clone()];
    if varies {
        cols.push(inv_t.clone());
    }
    let mut b = least_squares(&cols, &y)?;
    let mut gamma = b[0];
    let mut q = if varies { b[2] } else { 0.0 };
    let clamped = clamp_exponent(gamma);
    if clamped != gamma || q < 0.0 {
        gamma = clamped;
        let rest: Vec<f64> = y.iter().zip(&z).map(|(yi, zi)| yi - gamma * zi).collect();
        let mut sub = vec![ones.clone()];
        if varies && q >= 0.0 {
            sub.push(inv_t.clone());
        }
        b = least_squares(&sub, &rest)?;
        q = if sub.len() == 2 { b[1] } else { 0.0 };
        if q < 0.0 {
            q = 0.0;
        }
    }
    let p = (0..data.len()).map(|i| y[i] - gamma * z[i] - q * inv_t[i]).fold(f64::NEG_INFINITY, f64::max);
    let residuals = (0..data.len()).map(|i| y[i] - (gamma * z[i] + p + q * inv_t[i])).collect();
    Ok(TwoBallFit { c6: (p / gamma).exp(), c7: q / gamma, gamma, residuals })
}

impl TwoBallFit {
    pub fn apply(&self, ledger: &mut ConstantsLedger, family: &str) {
        ledger.c6 = self.c6;
        ledger.c7 = self.c7;
        ledger.gamma = self.gamma;
        for key in ["c6", "c7", "gamma"] {
            ledger.record_fit(key, FitRecord { family: family.into(), residuals: self.residuals.clone() });
        }
    }
}

/// Fitted interpolation constants.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationFit {
    pub c8: f64,
    pub theta: f64,
    /// `ln P − (C8 S + θ ln I0 + (1−θ) ln W)` per scenario; all ≤ 0.
    pub residuals: Vec<f64>,
}

/// Fits `ln(P/W) ≈ θ ln(I0/W) + C8 S`, clamps `θ` into `(0,1)`, then takes
/// the smallest `C8` for which every scenario satisfies the inequality.
pub fn fit_interpolation(data: &[InterpolationData]) -> Result<InterpolationFit> {
    if data.len() < 2 {
        return Err(Error::FitFailed("need at least two scenarios".into()));
    }
    let y: Vec<f64> = data.iter().map(|d| (d.terminal / d.observed).ln()).collect();
    let z: Vec<f64> = data.iter().map(|d| (d.initial / d.observed).ln()).collect();
    let s: Vec<f64> = data.iter().map(InterpolationData::scale).collect();
    if y.iter().chain(&z).any(|v| !v.is_finite()) {
        return Err(Error::FitFailed("non-finite log quantities".into()));
    }
    let b = least_squares(&[z.clone(), s.clone()], &y)?;
    let theta = clamp_exponent(b[0]);
    let c8 = (0..data.len()).map(|i| (y[i] - theta * z[i]) / s[i]).fold(f64::NEG_INFINITY, f64::max);
    let residuals = (0..data.len()).map(|i| y[i] - theta * z[i] - c8 * s[i]).collect();
    Ok(InterpolationFit { c8, theta, residuals })
}

impl InterpolationFit {
    pub fn apply(&self, ledger: &mut ConstantsLedger, family: &str) -> Result<()> {
        if !(self.c8 > 0.0) {
            return Err(Error::FitFailed(format!("fitted C8 = {} is not positive", self.c8)));
        }
        ledger.c8 = self.c8;
        ledger.set_theta(self.theta)?;
        for key in ["c8", "theta"] {
            ledger.record_fit(key, FitRecord { family: family.into(), residuals: self.residuals.clone() });
        }
        Ok(())
    }
}
