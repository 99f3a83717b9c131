//! Correlation curves on uniform delay grids, and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const UNIFORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Steady-state curves normalized to 1 at large |τ|.
    CwNormalized,
    /// Unnormalized per-pulse coincidence densities.
    PulsedUnnormalized,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::CwNormalized => "cw_normalized",
            Regime::PulsedUnnormalized => "pulsed_unnormalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cw_normalized" => Some(Regime::CwNormalized),
            "pulsed_unnormalized" => Some(Regime::PulsedUnnormalized),
            _ => None,
        }
    }
}

/// `n` evenly spaced delays `start, start + step, ...`.
pub fn uniform_grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + i as f64 * step).collect()
}

/// Grid `k·step` for `k = −N..=N`, `N = round(half_span/step)`; contains 0.
pub fn symmetric_grid(half_span: f64, step: f64) -> Vec<f64> {
    let n = (half_span / step).round() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Checks that `tau` is strictly increasing with uniform spacing and
/// returns the spacing.
pub fn grid_step(tau: &[f64]) -> Result<f64> {
    if tau.len() < 2 {
        return Err(Error::validation("a delay grid needs at least two points"));
    }
    let h = (tau[tau.len() - 1] - tau[0]) / (tau.len() - 1) as f64;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::validation("delay grid must be strictly increasing"));
    }
    for (k, w) in tau.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) || (d - h).abs() > UNIFORM_TOL * h {
            return Err(Error::validation(format!(
                "delay grid is not uniform at index {k} (spacing {d:e}, expected {h:e})"
            )));
        }
    }
    Ok(h)
}

/// A real curve sampled on a uniform delay grid (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    tau: Vec<f64>,
    values: Vec<f64>,
    regime: Regime,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

impl CorrelationCurve {
    pub fn new(tau: Vec<f64>, values: Vec<f64>, regime: Regime) -> Result<Self> {
        if tau.len() != values.len() {
            return Err(Error::validation(format!(
                "grid has {} points but {} values",
                tau.len(),
                values.len()
            )));
        }
        grid_step(&tau)?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "curve value at index {k} is not finite"
            )));
        }
        Ok(CorrelationCurve {
            tau,
            values,
            regime,
            labels: BTreeMap::new(),
        })
    }

    /// Evaluates `f` on the grid.
    pub fn from_fn(tau: &[f64], regime: Regime, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(tau.to_vec(), tau.iter().map(|&t| f(t)).collect(), regime)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn step(&self) -> f64 {
        (self.tau[self.tau.len() - 1] - self.tau[0]) / (self.tau.len() - 1) as f64
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.labels
    }

    pub fn with_label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }

    pub fn set_label(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.labels.insert(key.into(), value.into());
    }

    /// Same curve with values replaced; keeps grid, regime and labels.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut c = Self::new(self.tau.clone(), values, self.regime)?;
        c.labels = self.labels.clone();
        Ok(c)
    }

    /// True when both curves sample the same grid.
    pub fn same_grid(&self, other: &CorrelationCurve) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let h = self.step();
        self.tau
            .iter()
            .zip(&other.tau)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * h)
    }

    /// Linear interpolation; `None` outside the grid.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let h = self.step();
        let x = (t - self.tau[0]) / h;
        if x < -1e-9 || x > (self.len() - 1) as f64 + 1e-9 {
            return None;
        }
        let k = (x.floor() as usize).min(self.len() - 2);
        let frac = (x - k as f64).clamp(0.0, 1.0);
        Some(self.values[k] * (1.0 - frac) + self.values[k + 1] * frac)
    }

    pub fn write_csv(&self, path: &Path, provenance: &[(String, String)]) -> Result<()> {
        let mut comments: Vec<(String, String)> = provenance.to_vec();
        comments.push(("regime".into(), self.regime.as_str().into()));
        for (k, v) in &self.labels {
            comments.push((k.clone(), v.clone()));
        }
        let mut body = String::new();
        for (t, v) in self.tau.iter().zip(&self.values) {
            let _ = writeln!(body, "{t:e},{v:e}");
        }
        io::write_table(path, &comments, "tau_s,value", &body)
    }

    /// Reads a `tau_s,value` CSV. Comment lines `# key=value` become labels;
    /// a `regime` comment sets the regime (default cw_normalized).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = io::read_table(path, "tau_s,value")?;
        let regime = match table.comments.get("regime") {
            Some(r) => Regime::parse(r).ok_or_else(|| Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("unknown regime '{r}'"),
            })?,
            None => Regime::CwNormalized,
        };
        let (tau, values): (Vec<f64>, Vec<f64>) = table.rows.into_iter().unzip();
        let mut c = CorrelationCurve::new(tau, values, regime).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            msg: e.to_string(),
        })?;
        for (k, v) in table.comments {
            if k != "regime" {
                c.labels.insert(k, v);
            }
        }
        Ok(c)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn csv_round_trip_is_exact(
            start in -1e-7f64..0.0, step in 1e-12f64..1e-9,
            values in proptest::collection::vec(-1e3f64..1e3, 2..200),
            pulsed in any::<bool>(),
        ) {
            let regime = if pulsed { Regime::PulsedUnnormalized } else { Regime::CwNormalized };
            let tau = uniform_grid(start, step, values.len());
            let c = CorrelationCurve::new(tau, values, regime).unwrap().with_label("model", "x");
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.csv");
            c.write_csv(&p, &[]).unwrap();
            let back = CorrelationCurve::read_csv(&p).unwrap();
            prop_assert_eq!(back.tau(), c.tau());
            prop_assert_eq!(back.values(), c.values());
            prop_assert_eq!(back.regime(), regime);
            prop_assert_eq!(back.labels().get("model").map(String::as_str), Some("x"));
        }
    }
}
