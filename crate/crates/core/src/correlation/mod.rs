//! Correlation curves: closed forms, quantum-regression numerics,
//! interferometer models and detector-response convolution.

mod analytic;
mod irf;
mod numeric;

pub use analytic::{
    cw_g2_analytic, cw_g2_value, hbt_g2_analytic, interferometer_g2_cw, interferometer_g2_cw_value,
    interferometer_g2_pulsed, interferometer_g2_pulsed_value, interferometer_pulsed_side_value,
    pulsed_g2_values, side_peak_truncation_bound, DipWeights, PulsedComb, DEFAULT_SIDE_PEAKS,
};
pub use irf::{convolve_irf, convolve_values, irf_kernel, DetectorIrf, MAX_IRF_FRACTION};
pub use numeric::{
    cw_g2_numeric, cw_g2_numeric_values, pulsed_g2, pulsed_g2_numeric_values, PulsedMethod,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    Parallel,
    Perpendicular,
}

impl Polarization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarization::Parallel => "parallel",
            Polarization::Perpendicular => "perpendicular",
        }
    }
}

const SPLIT_TOL: f64 = 1e-6;

fn default_one() -> f64 {
    1.0
}

/// Beam-splitter intensity coefficients, fibre delay and imperfection
/// factors of the unbalanced Mach–Zehnder HOM setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerParams {
    pub r0sq: f64,
    pub t0sq: f64,
    pub r1sq: f64,
    pub t1sq: f64,
    /// Fibre delay dτ, seconds.
    pub delay: f64,
    #[serde(default = "default_one")]
    pub visibility: f64,
    /// Mode overlap M for co-polarized inputs.
    #[serde(default = "default_one")]
    pub m_parallel: f64,
    /// Mode overlap for crossed inputs; 0 for ideal polarizers.
    #[serde(default)]
    pub m_perpendicular: f64,
    /// Pulsed only: mismatch Δτ between delay and repetition period,
    /// seconds. Reduces the interference term by e^(−Γ₁Δτ).
    #[serde(default)]
    pub mismatch: f64,
}

impl InterferometerParams {
    /// 50:50 splitters, V = 1, the given M∥ and M⊥ = 0.
    pub fn symmetric(delay: f64, m_parallel: f64) -> Self {
        InterferometerParams {
            r0sq: 0.5,
            t0sq: 0.5,
            r1sq: 0.5,
            t1sq: 0.5,
            delay,
            visibility: 1.0,
            m_parallel,
            m_perpendicular: 0.0,
            mismatch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            ("r0sq", self.r0sq),
            ("t0sq", self.t0sq),
            ("r1sq", self.r1sq),
            ("t1sq", self.t1sq),
            ("visibility", self.visibility),
            ("m_parallel", self.m_parallel),
            ("m_perpendicular", self.m_perpendicular),
        ];
        for (name, v) in coeffs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if (self.r0sq + self.t0sq - 1.0).abs() > SPLIT_TOL {
            return Err(Error::validation(format!(
                "r0sq + t0sq must equal 1, got {}",
                self.r0sq + self.t0sq
            )));
        }
        if (self.r1sq + self.t1sq - 1.0).abs() > SPLIT_TOL {
            return Err(Error::validation(format!(
                "r1sq + t1sq must equal 1, got {}",
                self.r1sq + self.t1sq
            )));
        }
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(Error::validation(format!(
                "delay must be > 0, got {}",
                self.delay
            )));
        }
        if !(self.mismatch >= 0.0) || !self.mismatch.is_finite() {
            return Err(Error::validation(format!(
                "mismatch must be >= 0, got {}",
                self.mismatch
            )));
        }
        let norm = (self.r1sq * self.t0sq + self.r0sq * self.t1sq)
            * (self.r0sq * self.r1sq + self.t0sq * self.t1sq);
        if !(norm > 0.0) {
            return Err(Error::validation(
                "beam-splitter coefficients leave no coincidence path",
            ));
        }
        Ok(())
    }

    pub fn overlap(&self, pol: Polarization) -> f64 {
        match pol {
            Polarization::Parallel => self.m_parallel,
            Polarization::Perpendicular => self.m_perpendicular,
        }
    }

    pub fn mismatch_factor(&self, gamma1: f64) -> f64 {
        (-gamma1 * self.mismatch).exp()
    }
}
