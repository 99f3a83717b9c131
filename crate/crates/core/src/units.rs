//! Rate units. Rates are carried internally as angular rates in 1/s; the
//! experimental literature quotes them as Γ/2π in MHz.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Γ for a value quoted as Γ/2π in MHz.
pub fn mhz_over_2pi(value: f64) -> f64 {
    value * 2.0 * std::f64::consts::PI * 1e6
}

/// Inverse of [`mhz_over_2pi`].
pub fn to_mhz_over_2pi(rate: f64) -> f64 {
    rate / (2.0 * std::f64::consts::PI * 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnit {
    #[serde(rename = "MHz_over_2pi")]
    MhzOver2Pi,
    #[serde(rename = "per_second")]
    PerSecond,
}

/// A rate with an explicit unit, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub value: f64,
    pub unit: RateUnit,
}

impl Rate {
    pub fn per_second(&self) -> Result<f64> {
        if !self.value.is_finite() {
            return Err(Error::validation("rate value is not finite"));
        }
        Ok(match self.unit {
            RateUnit::MhzOver2Pi => mhz_over_2pi(self.value),
            RateUnit::PerSecond => self.value,
        })
    }
}
