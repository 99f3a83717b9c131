use crate::curve::{CorrelationCurve, Regime};
use crate::error::Result;

use super::{InterferometerParams, Polarization};

/// Antibunching dip 1 − V·e^(−Γ₁(1+S)|τ|) of a single-input (HBT) measurement.
pub fn hbt_g2_analytic(tau: &[f64], gamma1: f64, s: f64, v: f64) -> Result<CorrelationCurve> {
    let a = gamma1 * (1.0 + s);
    CorrelationCurve::from_fn(tau, Regime::CwNormalized, |t| {
        1.0 - v * (-a * t.abs()).exp()
    })
    .map(|c| c.with_label("model", "hbt"))
}

/// Pointwise two-photon interference dip under cw driving,
/// 1 − (V/2)·e^(−Γ₁(1+S)|τ|)·(1 + M·e^(−2γ|τ|)). M = 0 is the
/// perpendicular-polarization curve.
pub fn cw_g2_value(t: f64, gamma1: f64, gamma_pd: f64, s: f64, v: f64, m: f64) -> f64 {
    let a = gamma1 * (1.0 + s);
    let x = t.abs();
    1.0 - 0.5 * v * (-a * x).exp() * (1.0 + m * (-2.0 * gamma_pd * x).exp())
}

pub fn cw_g2_analytic(
    tau: &[f64],
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    v: f64,
    m: f64,
) -> Result<CorrelationCurve> {
    CorrelationCurve::from_fn(tau, Regime::CwNormalized, |t| {
        cw_g2_value(t, gamma1, gamma_pd, s, v, m)
    })
    .map(|c| c.with_label("model", "cw_hom"))
}

/// Per-pulse coincidence densities for an emitter starting in |e⟩:
/// G²∥(τ) = [e^(−Γ₁|τ|) − e^(−(Γ₁+2γ)|τ|)]/(2Γ₁) and G²⊥(τ) = e^(−Γ₁|τ|)/(2Γ₁).
pub fn pulsed_g2_values(t: f64, gamma1: f64, gamma_pd: f64) -> (f64, f64) {
    let x = t.abs();
    let perp = (-gamma1 * x).exp() / (2.0 * gamma1);
    let par = perp - (-(gamma1 + 2.0 * gamma_pd) * x).exp() / (2.0 * gamma1);
    (par, perp)
}

/// Relative weights of the four dips of an unbalanced Mach–Zehnder
/// interferometer, already divided by the normalization prefactor
/// 1/((r₁²t₀² + r₀²t₁²)(r₀²r₁² + t₀²t₁²)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipWeights {
    /// Central antibunching term.
    pub central: f64,
    /// Central two-photon interference term (multiplied by M).
    pub interference: f64,
    /// Side dip centred at τ = +dτ.
    pub plus_delay: f64,
    /// Side dip centred at τ = −dτ.
    pub minus_delay: f64,
}

impl DipWeights {
    pub fn new(ifp: &InterferometerParams) -> Self {
        let (r0, t0, r1, t1) = (ifp.r0sq, ifp.t0sq, ifp.r1sq, ifp.t1sq);
        let norm = (r1 * t0 + r0 * t1) * (r0 * r1 + t0 * t1);
        DipWeights {
            central: r1 * t1 * (r0 * r0 + t0 * t0) / norm,
            interference: 2.0 * r0 * r1 * t0 * t1 / norm,
            plus_delay: r0 * r1 * r1 * t0 / norm,
            minus_delay: r0 * t1 * t1 * t0 / norm,
        }
    }
}

/// The dip structure subtracted from 1 (cw) or from the pulse comb (pulsed).
fn dip_sum(
    w: &DipWeights,
    t: f64,
    antibunch_rate: f64,
    coherence_rate: f64,
    m: f64,
    delay: f64,
) -> f64 {
    w.central * (-antibunch_rate * t.abs()).exp()
        + m * w.interference * (-coherence_rate * t.abs()).exp()
        + w.plus_delay * (-antibunch_rate * (t - delay).abs()).exp()
        + w.minus_delay * (-antibunch_rate * (t + delay).abs()).exp()
}

pub fn interferometer_g2_cw_value(
    t: f64,
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    ifp: &InterferometerParams,
    pol: Polarization,
) -> f64 {
    let w = DipWeights::new(ifp);
    let a = gamma1 * (1.0 + s);
    1.0 - ifp.visibility * dip_sum(&w, t, a, a + 2.0 * gamma_pd, ifp.overlap(pol), ifp.delay)
}

/// cw correlation behind an unbalanced interferometer with beam splitters
/// (r₀², t₀²), (r₁², t₁²) and fibre delay dτ: central antibunching and
/// interference terms plus side dips at ±dτ.
pub fn interferometer_g2_cw(
    tau: &[f64],
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    ifp: &InterferometerParams,
    pol: Polarization,
) -> Result<CorrelationCurve> {
    ifp.validate()?;
    CorrelationCurve::from_fn(tau, Regime::CwNormalized, |t| {
        interferometer_g2_cw_value(t, gamma1, gamma_pd, s, ifp, pol)
    })
    .map(|c| {
        c.with_label("model", "interferometer_cw")
            .with_label("polarization", pol.as_str())
    })
}

/// Default number of side peaks kept on each side of τ = 0.
pub const DEFAULT_SIDE_PEAKS: usize = 12;

/// Upper bound on the relative contribution of the first omitted side peak
/// when the comb is truncated at `n` peaks per side.
pub fn side_peak_truncation_bound(gamma1: f64, rep_period: f64, n: usize) -> f64 {
    (-gamma1 * n as f64 * rep_period).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsedComb {
    pub rep_period: f64,
    pub n_side_peaks: usize,
}

pub fn interferometer_g2_pulsed_value(
    t: f64,
    gamma1: f64,
    gamma_pd: f64,
    ifp: &InterferometerParams,
    comb: PulsedComb,
    pol: Polarization,
) -> f64 {
    let n = comb.n_side_peaks as i64;
    let peaks: f64 = (-n..=n)
        .map(|i| (-gamma1 * (t - i as f64 * comb.rep_period).abs()).exp())
        .sum();
    let w = DipWeights::new(ifp);
    let m = ifp.overlap(pol) * ifp.mismatch_factor(gamma1);
    peaks - ifp.visibility * dip_sum(&w, t, gamma1, gamma1 + 2.0 * gamma_pd, m, ifp.delay)
}

/// Pulsed coincidences behind the interferometer: a comb of peaks at
/// multiples of the repetition period minus the four-term dip structure.
/// Peaks from neighbouring pulses may overlap.
pub fn interferometer_g2_pulsed(
    tau: &[f64],
    gamma1: f64,
    gamma_pd: f64,
    ifp: &InterferometerParams,
    comb: PulsedComb,
    pol: Polarization,
) -> Result<CorrelationCurve> {
    ifp.validate()?;
    comb.validate()?;
    CorrelationCurve::from_fn(tau, Regime::PulsedUnnormalized, |t| {
        interferometer_g2_pulsed_value(t, gamma1, gamma_pd, ifp, comb, pol)
    })
    .map(|c| {
        c.with_label("model", "interferometer_pulsed")
            .with_label("polarization", pol.as_str())
    })
}

/// The part of the pulsed model that does not belong to the central
/// feature: all comb peaks with i ≠ 0 and the two delayed dips. Subtracting
/// this from perpendicular data leaves only the central peak.
pub fn interferometer_pulsed_side_value(
    t: f64,
    gamma1: f64,
    ifp: &InterferometerParams,
    comb: PulsedComb,
) -> f64 {
    let n = comb.n_side_peaks as i64;
    let peaks: f64 = (-n..=n)
        .filter(|&i| i != 0)
        .map(|i| (-gamma1 * (t - i as f64 * comb.rep_period).abs()).exp())
        .sum();
    let w = DipWeights::new(ifp);
    let side_dips = w.plus_delay * (-gamma1 * (t - ifp.delay).abs()).exp()
        + w.minus_delay * (-gamma1 * (t + ifp.delay).abs()).exp();
    peaks - ifp.visibility * side_dips
}

impl PulsedComb {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_period > 0.0) || !self.rep_period.is_finite() {
            return Err(crate::error::Error::validation(format!(
                "repetition period must be > 0, got {}",
                self.rep_period
            )));
        }
        Ok(())
    }
}
