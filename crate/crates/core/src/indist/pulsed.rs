use crate::curve::{CorrelationCurve, Regime};
use crate::error::{Error, Result};
use crate::quadrature::trapezoid;
use crate::sim::CoincidenceHistogram;

use super::{IndistinguishabilityResult, Method};

/// Coincidence data as either a sampled density or binned counts.
///
/// Curves integrate by the trapezoid rule and carry no noise; histograms
/// integrate as `Σ counts · width` with Poisson variances.
#[derive(Debug, Clone)]
pub struct Coincidences {
    tau: Vec<f64>,
    values: Vec<f64>,
    step: f64,
    counted: bool,
    regime: Regime,
}

impl From<&CorrelationCurve> for Coincidences {
    fn from(c: &CorrelationCurve) -> Self {
        Coincidences {
            tau: c.tau().to_vec(),
            values: c.values().to_vec(),
            step: c.step(),
            counted: false,
            regime: c.regime(),
        }
    }
}

impl From<&CoincidenceHistogram> for Coincidences {
    fn from(h: &CoincidenceHistogram) -> Self {
        Coincidences {
            tau: h.centers(),
            values: h.counts_f64(),
            step: h.bin_width(),
            counted: true,
            regime: h.regime(),
        }
    }
}

impl Coincidences {
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    fn same_grid(&self, other: &Coincidences) -> bool {
        self.counted == other.counted
            && self.tau.len() == other.tau.len()
            && (self.step - other.step).abs() <= 1e-9 * self.step
            && self
                .tau
                .iter()
                .zip(&other.tau)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * self.step)
    }

    fn window(&self, half_width: f64) -> std::ops::Range<usize> {
        let tol = 1e-9 * self.step;
        let lo = self.tau.iter().position(|&t| t >= -half_width - tol);
        let hi = self.tau.iter().rposition(|&t| t <= half_width + tol);
        match (lo, hi) {
            (Some(a), Some(b)) if a <= b => a..b + 1,
            _ => 0..0,
        }
    }

    /// `(area, variance)` over the index range.
    fn area(&self, r: std::ops::Range<usize>) -> (f64, f64) {
        let vals = &self.values[r];
        if self.counted {
            let h = self.step;
            (
                vals.iter().sum::<f64>() * h,
                vals.iter().map(|c| c * h * h).sum(),
            )
        } else {
            (trapezoid(vals, self.step), 0.0)
        }
    }
}

/// Pulsed indistinguishability 𝓘 = (∫G²⊥ − ∫G²∥)/∫G²⊥ over the central
/// feature `|τ| ≤ central_window` (all data when `None`).
///
/// Side features that overlap the window cancel in the numerator; for the
/// denominator they are removed by subtracting `side_model`, sampled on the
/// same grid as the data (e.g. a fitted comb without its central peak).
pub fn pulsed_extract(
    par: impl Into<Coincidences>,
    perp: impl Into<Coincidences>,
    central_window: Option<f64>,
    side_model: Option<&[f64]>,
) -> Result<IndistinguishabilityResult> {
    let (par, perp) = (par.into(), perp.into());
    for d in [&par, &perp] {
        if d.regime != Regime::PulsedUnnormalized {
            return Err(Error::argument(format!(
                "pulsed extraction needs pulsed_unnormalized data, got {}",
                d.regime.as_str()
            )));
        }
    }
    if !par.same_grid(&perp) {
        return Err(Error::argument(
            "parallel and perpendicular data are on different grids",
        ));
    }
    if let Some(s) = side_model {
        if s.len() != perp.tau.len() {
            return Err(Error::argument(format!(
                "side model has {} samples for {} data points",
                s.len(),
                perp.tau.len()
            )));
        }
    }
    let w = match central_window {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => {
            return Err(Error::argument(format!(
                "central window must be > 0, got {w}"
            )))
        }
        None => f64::INFINITY,
    };
    let r = perp.window(w);
    if r.len() < 2 {
        return Err(Error::argument(
            "central window contains fewer than two samples",
        ));
    }
    let (a_par, var_par) = par.area(r.clone());
    let (a_perp, var_perp) = perp.area(r.clone());
    let side = side_model.map_or(0.0, |s| {
        if perp.counted {
            s[r.clone()].iter().sum::<f64>() * perp.step
        } else {
            trapezoid(&s[r.clone()], perp.step)
        }
    });
    let den = a_perp - side;
    if !(den > 0.0) {
        return Err(Error::Extraction(format!(
            "perpendicular central area is {den:e} after side-feature subtraction"
        )));
    }
    let num = a_perp - a_par;
    let value = num / den;
    // ∂𝓘/∂A⊥ = (D − N)/D², ∂𝓘/∂A∥ = −1/D.
    let d_perp = (den - num) / (den * den);
    let var = d_perp * d_perp * var_perp + var_par / (den * den);
    let mut res = IndistinguishabilityResult::new(value, var.sqrt(), Method::PulsedIntegral)
        .detail("area_parallel", a_par)
        .detail("area_perpendicular", a_perp)
        .detail("side_area", side)
        .detail("window_half_width_s", if w.is_finite() { w } else { 0.0 });
    let edge = |d: &Coincidences| {
        let peak = d.values[r.clone()].iter().cloned().fold(0.0, f64::max);
        let ends = d.values[r.start].max(d.values[r.end - 1]);
        peak > 0.0 && ends > 1e-3 * peak
    };
    if side_model.is_none() && w.is_finite() && edge(&perp) {
        res.warnings.push(
            "perpendicular data are not negligible at the window edge; side features may bias the denominator"
                .into(),
        );
    }
    Ok(res)
}
