//! Indistinguishability extraction: the pulsed time-integrated measure,
//! the cw integral Ĩ(S) with its extrapolation to S = 0, and the
//! delay-mismatch and phonon-sideband corrections.

mod cw;
mod extrapolate;
mod pulsed;
mod sideband;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cw::{
    breakdown_saturation, cw_integral_extract, cw_integral_extract_histograms, i_tilde_analytic,
    i_tilde_mismatched, i_tilde_numeric, i_tilde_pair, integrated_dips, CwExtractOptions,
    IntegratedDips, TwoModelPoint, EDGE_TOLERANCE,
};
pub use extrapolate::{extrapolate_to_zero, ExtrapolationOptions, ExtrapolationPoint};
pub use pulsed::{pulsed_extract, Coincidences};
pub use sideband::{i_tilde_sideband, SidebandSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PulsedIntegral,
    CwIntegral,
    CwExtrapolated,
    Analytic,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PulsedIntegral => "pulsed_integral",
            Method::CwIntegral => "cw_integral",
            Method::CwExtrapolated => "cw_extrapolated",
            Method::Analytic => "analytic",
        }
    }
}

/// A multiplicative correction that has been divided out of a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub name: String,
    pub factor: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityResult {
    pub value: f64,
    pub uncertainty: f64,
    pub method: Method,
    pub s_at_measurement: Option<f64>,
    #[serde(default)]
    pub corrections_applied: Vec<Correction>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Intermediate quantities (integrals, fitted M, …) by name.
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    /// Input identifiers such as file hashes.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl IndistinguishabilityResult {
    pub(crate) fn new(value: f64, uncertainty: f64, method: Method) -> Self {
        let mut r = IndistinguishabilityResult {
            value,
            uncertainty,
            method,
            s_at_measurement: None,
            corrections_applied: Vec::new(),
            warnings: Vec::new(),
            details: BTreeMap::new(),
            provenance: BTreeMap::new(),
        };
        r.check_range();
        r
    }

    fn check_range(&mut self) {
        if self.value > 1.0 + self.uncertainty {
            self.warnings.push(format!(
                "value {:.6} exceeds 1 by more than its uncertainty",
                self.value
            ));
        }
    }

    pub(crate) fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    /// Divides value and uncertainty by a correction factor and records it.
    pub fn apply_correction(&mut self, correction: Correction) -> Result<()> {
        if !(correction.factor > 0.0) || !correction.factor.is_finite() {
            return Err(Error::argument(format!(
                "correction '{}' has non-positive factor {}",
                correction.name, correction.factor
            )));
        }
        self.value /= correction.factor;
        self.uncertainty /= correction.factor;
        self.corrections_applied.push(correction);
        self.check_range();
        Ok(())
    }

    /// Applies [`delay_mismatch_correction`] in place.
    pub fn correct_delay_mismatch(&mut self, gamma1: f64, delta_tau: f64) -> Result<()> {
        let d = delay_mismatch_correction(self.value, gamma1, delta_tau)?;
        self.warnings.extend(d.warning.clone());
        self.apply_correction(d.correction(gamma1, delta_tau))
    }
}

/// Below this factor the first-order delay correction is doubtful.
pub const DELAY_FACTOR_WARN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCorrection {
    pub corrected: f64,
    pub factor: f64,
    pub warning: Option<String>,
}

impl DelayCorrection {
    fn correction(&self, gamma1: f64, delta_tau: f64) -> Correction {
        Correction {
            name: "delay_mismatch".into(),
            factor: self.factor,
            inputs: [
                ("gamma1".to_string(), gamma1),
                ("delta_tau_s".to_string(), delta_tau),
            ]
            .into_iter()
            .collect(),
        }
    }
}

/// Interference visibility lost to an interferometer delay that misses the
/// emission period by `delta_tau`: factor e^(−Γ₁Δτ), corrected = raw/factor.
pub fn delay_mismatch_correction(
    i_raw: f64,
    gamma1: f64,
    delta_tau: f64,
) -> Result<DelayCorrection> {
    if !(gamma1 > 0.0) || !gamma1.is_finite() {
        return Err(Error::argument(format!("gamma1 must be > 0, got {gamma1}")));
    }
    if !(delta_tau >= 0.0) || !delta_tau.is_finite() {
        return Err(Error::argument(format!(
            "delay mismatch must be >= 0, got {delta_tau}"
        )));
    }
    let factor = (-gamma1 * delta_tau).exp();
    if !(factor > 0.0) {
        return Err(Error::argument(
            "delay mismatch correction factor underflows",
        ));
    }
    let warning = (factor < DELAY_FACTOR_WARN).then(|| {
        format!("delay correction factor {factor:.3} < {DELAY_FACTOR_WARN}: first-order correction is questionable")
    });
    Ok(DelayCorrection {
        corrected: i_raw / factor,
        factor,
        warning,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn delay_correction_inverts(raw in -0.2f64..1.0, g1 in 1e7f64..1e9, dt in 0.0f64..2e-9) {
            let d = delay_mismatch_correction(raw, g1, dt).unwrap();
            prop_assert!(d.factor > 0.0 && d.factor <= 1.0);
            prop_assert!((d.corrected * d.factor - raw).abs() < 1e-14);
            let mut r = IndistinguishabilityResult::new(raw, 0.01, Method::PulsedIntegral);
            r.correct_delay_mismatch(g1, dt).unwrap();
            prop_assert!((r.value - d.corrected).abs() < 1e-14);
            prop_assert!((r.uncertainty * d.factor - 0.01).abs() < 1e-15);
        }
    }
}
