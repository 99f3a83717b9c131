use serde::{Deserialize, Serialize};

use crate::curve::grid_step;
use crate::error::{Error, Result};

use super::i_tilde_analytic;

/// Phonon-bath coherence entering the interference term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SidebandSpec {
    /// Constant |𝓖| = dw; the interference term scales by dw².
    DebyeWallerScalar { dw: f64 },
    /// 𝓖(τ) on a uniform grid starting at τ = 0; held at its last value
    /// beyond the table.
    TabulatedPhononCorrelator {
        tau: Vec<f64>,
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

impl SidebandSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SidebandSpec::DebyeWallerScalar { dw } => {
                if !(*dw > 0.0 && *dw <= 1.0) {
                    return Err(Error::validation(format!(
                        "dw must lie in (0, 1], got {dw}"
                    )));
                }
            }
            SidebandSpec::TabulatedPhononCorrelator { tau, re, im } => {
                if re.len() != tau.len() || !(im.is_empty() || im.len() == tau.len()) {
                    return Err(Error::validation(
                        "phonon correlator arrays differ in length",
                    ));
                }
                grid_step(tau)?;
                if tau[0].abs() > 1e-18 {
                    return Err(Error::validation(
                        "phonon correlator table must start at tau = 0",
                    ));
                }
                let m = self.modulus_squared();
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(
                        "phonon correlator has non-finite entries",
                    ));
                }
                if !(m[0] > 0.0) {
                    return Err(Error::validation("phonon correlator vanishes at tau = 0"));
                }
                if let Some(k) = m.iter().position(|&v| v > m[0] * (1.0 + 1e-12)) {
                    return Err(Error::validation(format!(
                        "|G(tau)| exceeds |G(0)| at tau = {:e} s",
                        tau[k]
                    )));
                }
            }
        }
        Ok(())
    }

    fn modulus_squared(&self) -> Vec<f64> {
        match self {
            SidebandSpec::DebyeWallerScalar { dw } => vec![dw * dw],
            SidebandSpec::TabulatedPhononCorrelator { re, im, .. } => re
                .iter()
                .enumerate()
                .map(|(k, r)| r * r + im.get(k).map_or(0.0, |i| i * i))
                .collect(),
        }
    }
}

/// 1 − e^(−x)(1 + x), accurate for small x.
fn one_minus_exp_poly(x: f64) -> f64 {
    if x > 0.1 {
        return 1.0 - (-x).exp() * (1.0 + x);
    }
    // Σ_{k≥2} (−1)^k (k−1) x^k / k!
    let mut term = x; // x^k / k! at k = 1
    let mut sum = 0.0;
    for k in 2..20 {
        term *= x / k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (k - 1) as f64 * term;
    }
    sum
}

/// ∫₀^∞ u(τ)e^(−bτ)dτ for u piecewise linear on `tau`, constant after it.
fn weighted_laplace(tau: &[f64], u: &[f64], b: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..tau.len() - 1 {
        let (t0, t1) = (tau[k], tau[k + 1]);
        let d = t1 - t0;
        let e0 = (-b * t0).exp();
        let flat = e0 * -(-b * d).exp_m1() / b;
        let ramp = e0 * one_minus_exp_poly(b * d) / (b * b);
        total += u[k] * flat + (u[k + 1] - u[k]) / d * ramp;
    }
    total + u[u.len() - 1] * (-b * tau[tau.len() - 1]).exp() / b
}

/// Ĩ(S) of the two-level emitter with a phonon sideband: the coherent
/// integrand |g¹|²/Pₑ² = e^(−(Γ₁(1+S)+2γ)τ) is weighted by |𝓖(τ)|² while
/// the antibunching integral 1/(Γ₁(1+S)) is unchanged.
pub fn i_tilde_sideband(s: f64, gamma1: f64, gamma_pd: f64, sb: &SidebandSpec) -> Result<f64> {
    sb.validate()?;
    if !(s >= 0.0) || !(gamma1 > 0.0) || !(gamma_pd >= 0.0) {
        return Err(Error::argument(
            "sideband Ĩ needs S >= 0, gamma1 > 0, gamma_pd >= 0",
        ));
    }
    match sb {
        SidebandSpec::DebyeWallerScalar { dw } => {
            Ok(dw * dw * i_tilde_analytic(s, gamma1, gamma_pd, 1.0))
        }
        SidebandSpec::TabulatedPhononCorrelator { tau, .. } => {
            let a = gamma1 * (1.0 + s);
            let b = a + 2.0 * gamma_pd;
            let t_max = tau[tau.len() - 1];
            if t_max < 5.0 / b {
                return Err(Error::argument(format!(
                    "phonon correlator table ends at {t_max:e} s, shorter than 5 coherence times ({:e} s)",
                    5.0 / b
                )));
            }
            Ok(a * weighted_laplace(tau, &sb.modulus_squared(), b))
        }
    }
}
