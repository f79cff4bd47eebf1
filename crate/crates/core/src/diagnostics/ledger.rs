//! Ledger of the unnamed positive constants, with provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{alpha_from_theta, kappa_from_alpha};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerMode {
    Manual,
    Fitted,
}

/// Residuals and family description of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub family: String,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsLedger {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c_tilde: f64,
    pub c: f64,
    theta: f64,
    pub gamma: f64,
    pub h0: Option<f64>,
    pub mode: LedgerMode,
    /// Provenance comment per key.
    pub provenance: BTreeMap<String, String>,
    pub fits: BTreeMap<String, FitRecord>,
}

impl Default for ConstantsLedger {
    fn default() -> Self {
        let mut provenance = BTreeMap::new();
        provenance.insert("c4".into(), "4*||grad eta||^2 for the quintic cutoff, r=1, delta=1/2".into());
        Self {
            c1: 2.0,
            c2: 1.0,
            c3: 1.0,
            c4: 4.0 * (7.5f64 / 0.5).powi(2),
            c5: 1.0,
            c6: 1.0,
            c7: 1.0,
            c8: 1.0,
            c_tilde: 1.0,
            c: 1.0,
            theta: 0.5,
            gamma: 0.5,
            h0: None,
            mode: LedgerMode::Manual,
            provenance,
            fits: BTreeMap::new(),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!("{name} must lie in (0,1), got {v}")));
    }
    Ok(())
}

impl ConstantsLedger {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        check_unit("theta", theta)?;
        self.theta = theta;
        Ok(())
    }

    /// `α = θ / (1 − θ)`.
    pub fn alpha(&self) -> f64 {
        alpha_from_theta(self.theta).expect("theta validated on construction")
    }

    /// `κ = √((α + 2) / (α + 1))`.
    pub fn kappa(&self) -> f64 {
        kappa_from_alpha(self.alpha()).expect("alpha positive")
    }

    /// Sets `C4 = 4 ||∇η||²` for the cutoff between `B_{(1+3δ/4) r}` and `B_{(1+δ) r}`.
    pub fn with_cutoff_c4(mut self, r: f64, delta: f64) -> Self {
        self.c4 = 4.0 * (7.5 / (delta * r)).powi(2);
        self.provenance.insert("c4".into(), format!("4*||grad eta||^2 for the quintic cutoff, r={r}, delta={delta}"));
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("theta", self.theta)?;
        check_unit("gamma", self.gamma)?;
        if !(self.c1 > 1.0) {
            return Err(Error::InvalidArgument(format!("C1 must exceed 1, got {}", self.c1)));
        }
        for (name, v) in [
            ("C2", self.c2),
            ("C3", self.c3),
            ("C4", self.c4),
            ("C5", self.c5),
            ("C6", self.c6),
            ("C8", self.c8),
            ("C_tilde", self.c_tilde),
            ("C", self.c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c7 >= 0.0 && self.c7.is_finite()) {
            return Err(Error::InvalidArgument(format!("C7 must be nonnegative, got {}", self.c7)));
        }
        Ok(())
    }

    /// Records a fitted value and marks the ledger as fitted.
    pub fn record_fit(&mut self, key: &str, record: FitRecord) {
        self.mode = LedgerMode::Fitted;
        self.provenance.insert(key.into(), format!("fitted on {}", record.family));
        self.fits.insert(key.into(), record);
    }

    fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("C1", self.c1),
            ("C2", self.c2),
            ("C3", self.c3),
            ("C4", self.c4),
            ("C5", self.c5),
            ("C6", self.c6),
            ("C7", self.c7),
            ("C8", self.c8),
            ("C_tilde", self.c_tilde),
            ("C", self.c),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("alpha", self.alpha()),
            ("kappa", self.kappa()),
        ];
        if let Some(h0) = self.h0 {
            v.push(("h0", h0));
        }
        v
    }

    /// `key = value` lines with `#` provenance comments.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            LedgerMode::Manual => "manual",
            LedgerMode::Fitted => "fitted",
        };
        let _ = writeln!(out, "mode = {mode}");
        for (k, v) in self.entries() {
            if let Some(p) = self.provenance.get(&k.to_lowercase()) {
                let _ = writeln!(out, "# {p}");
            }
            if let Some(fit) = self.fits.get(&k.to_lowercase()) {
                let worst = fit.residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(out, "# {} residuals, max {worst:e}", fit.residuals.len());
            }
            let _ = writeln!(out, "{k} = {v:e}");
        }
        out
    }

    /// Parses the format written by [`ConstantsLedger::to_kv_string`].
    /// `alpha` and `kappa` are recomputed from `theta`.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut ledger = Self { provenance: BTreeMap::new(), ..Self::default() };
        let mut pending: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if pending.is_none() {
                    pending = Some(c.trim().to_string());
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("ledger line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "mode" {
                ledger.mode = match v {
                    "manual" => LedgerMode::Manual,
                    "fitted" => LedgerMode::Fitted,
                    _ => return Err(Error::Parse(format!("ledger line {}: unknown mode {v}", lineno + 1))),
                };
                continue;
            }
            let x: f64 = v.parse().map_err(|_| Error::Parse(format!("ledger line {}: bad number {v}", lineno + 1)))?;
            let slot = match k {
                "C1" => &mut ledger.c1,
                "C2" => &mut ledger.c2,
                "C3" => &mut ledger.c3,
                "C4" => &mut ledger.c4,
                "C5" => &mut ledger.c5,
                "C6" => &mut ledger.c6,
                "C7" => &mut ledger.c7,
                "C8" => &mut ledger.c8,
                "C_tilde" => &mut ledger.c_tilde,
                "C" => &mut ledger.c,
                "theta" => &mut ledger.theta,
                "gamma" => &mut ledger.gamma,
                "h0" => {
                    ledger.h0 = Some(x);
                    pending = None;
                    continue;
                }
                "alpha" | "kappa" => {
                    pending = None;
                    continue;
                }
                _ => return Err(Error::Parse(format!("ledger line {}: unknown key {k}", lineno + 1))),
            };
            *slot = x;
            if let Some(p) = pending.take() {
                if !p.contains("residuals, max") {
                    ledger.provenance.insert(k.to_lowercase(), p);
                }
            }
        }
        ledger.validate()?;
        Ok(ledger)
    }
}
