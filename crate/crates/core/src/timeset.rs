//! Finite unions of time intervals and their exact measure.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::csum;

/// Sorted, disjoint union of half-open intervals `[a, b)` with `a < b`.
///
/// Overlapping or touching inputs are merged on construction. The literal
/// syntax is `(a,b)+(c,d)`; an empty string is the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSet {
    intervals: Vec<(f64, f64)>,
    measure: f64,
}

impl TimeSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidArgument(format!("interval ({a},{b}) must have a < b")));
            }
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        let measure = csum(merged.iter().map(|(a, b)| b - a));
        Ok(Self { intervals: merged, measure })
    }

    pub fn empty() -> Self {
        Self { intervals: Vec::new(), measure: 0.0 }
    }

    /// The single interval `[a, b)`.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(a, b)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= t && t < b)
    }

    /// Exact measure of `E ∩ (a, b)`.
    pub fn measure_in(&self, a: f64, b: f64) -> f64 {
        if !(a < b) {
            return 0.0;
        }
        csum(self.intervals.iter().map(|&(lo, hi)| (hi.min(b) - lo.max(a)).max(0.0)))
    }

    /// Checks `E ⊂ [0, horizon]`.
    pub fn check_within(&self, horizon: f64) -> Result<()> {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(&(a, _)), Some(&(_, b))) if a < 0.0 || b > horizon * (1.0 + 1e-12) => Err(Error::InvalidArgument(
                format!("time set {self} is not contained in (0, {horizon})"),
            )),
            _ => Ok(()),
        }
    }

    /// Per-step membership of the step midpoints `(n + 1/2) T / K`.
    pub fn step_gates(&self, horizon: f64, steps: usize) -> Vec<bool> {
        (0..steps).map(|n| self.contains(step_midpoint(horizon, steps, n))).collect()
    }
}

/// Midpoint of step `n` for `K` uniform steps on `[0, T]`.
#[inline]
pub fn step_midpoint(horizon: f64, steps: usize, n: usize) -> f64 {
    (n as f64 + 0.5) * horizon / steps as f64
}

/// `|E ∩ (a, b)|`.
pub fn time_measure(set: &TimeSet, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("need a < b, got ({a},{b})")));
    }
    Ok(set.measure_in(a, b))
}

impl fmt::Display for TimeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, b)) in self.intervals.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "({a},{b})")?;
        }
        Ok(())
    }
}

impl FromStr for TimeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_matches('"').trim();
        if s.is_empty() {
            return Ok(Self::empty());
        }
        let mut intervals = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            let inner = part
                .strip_prefix('(')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| Error::Parse(format!("interval `{part}` must look like (a,b)")))?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("interval `{part}` needs two endpoints")))?;
            let parse = |v: &str| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad endpoint `{}` in `{part}`", v.trim())))
            };
            intervals.push((parse(a)?, parse(b)?));
        }
        Self::new(intervals)
    }
}
