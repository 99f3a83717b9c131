use serde::{Deserialize, Serialize};

use crate::curve::{CorrelationCurve, Regime};
use crate::emitter::{EmitterModel, ThreeLevelParams, TwoLevelParams};
use crate::error::{Error, Result};
use crate::lindblad::{
    build_superoperator, integrated_abs_squared_correlator, integrated_correlator, steady_state,
    CMatrix,
};
use crate::quadrature::trapezoid;
use crate::sim::{asymptote_level, CoincidenceHistogram};

use super::{IndistinguishabilityResult, Method};

/// Curves must be within this of 1 at the grid edges, else the integral
/// is flagged as truncated.
pub const EDGE_TOLERANCE: f64 = 0.005;

/// Half-width of the default integration window in units of the
/// antibunching time 1/(Γ₁(1+S)).
pub const DEFAULT_WINDOW_TIMES: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwExtractOptions {
    /// Integrate over `|τ| ≤ window` (seconds); whole grid when `None`.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default = "default_edge")]
    pub edge_tolerance: f64,
}

fn default_edge() -> f64 {
    EDGE_TOLERANCE
}

impl Default for CwExtractOptions {
    fn default() -> Self {
        CwExtractOptions {
            window: None,
            edge_tolerance: EDGE_TOLERANCE,
        }
    }
}

impl CwExtractOptions {
    /// The default ±20/(Γ₁(1+S)) window.
    pub fn for_saturation(gamma1: f64, s: f64) -> Self {
        CwExtractOptions {
            window: Some(DEFAULT_WINDOW_TIMES / (gamma1 * (1.0 + s))),
            ..Default::default()
        }
    }
}

fn window_range(tau: &[f64], h: f64, window: Option<f64>) -> Result<std::ops::Range<usize>> {
    let w = match window {
        None => return Ok(0..tau.len()),
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => {
            return Err(Error::argument(format!(
                "integration window must be > 0, got {w}"
            )))
        }
    };
    let tol = 1e-9 * h;
    let lo = tau.iter().position(|&t| t >= -w - tol).unwrap_or(tau.len());
    let hi = tau.iter().rposition(|&t| t <= w + tol).map_or(0, |k| k + 1);
    if hi < lo + 2 {
        return Err(Error::argument(
            "integration window contains fewer than two samples",
        ));
    }
    if tau[0] > -w + h || tau[tau.len() - 1] < w - h {
        return Err(Error::argument(format!(
            "integration window ±{w:e} s extends beyond the data grid"
        )));
    }
    Ok(lo..hi)
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if !(den > 0.0) {
        return Err(Error::Extraction(format!(
            "perpendicular dip integral is {den:e}; Ĩ is undefined"
        )));
    }
    Ok(num / den)
}

/// Ĩ = [∫(1 − g²∥) − ∫(1 − g²⊥)] / ∫(1 − g²⊥) from normalized cw curves.
pub fn cw_integral_extract(
    par: &CorrelationCurve,
    perp: &CorrelationCurve,
    opts: &CwExtractOptions,
) -> Result<IndistinguishabilityResult> {
    for c in [par, perp] {
        if c.regime() != Regime::CwNormalized {
            return Err(Error::argument(format!(
                "cw extraction needs cw_normalized curves, got {}",
                c.regime().as_str()
            )));
        }
    }
    if !par.same_grid(perp) {
        return Err(Error::argument(
            "parallel and perpendicular curves are on different grids",
        ));
    }
    let h = par.step();
    let r = window_range(par.tau(), h, opts.window)?;
    let dip = |c: &CorrelationCurve| -> f64 {
        let d: Vec<f64> = c.values()[r.clone()].iter().map(|v| 1.0 - v).collect();
        trapezoid(&d, h)
    };
    let (a_par, a_perp) = (dip(par), dip(perp));
    let value = ratio(a_par - a_perp, a_perp)?;
    let mut res = IndistinguishabilityResult::new(value, 0.0, Method::CwIntegral)
        .detail("dip_integral_parallel", a_par)
        .detail("dip_integral_perpendicular", a_perp);
    for (name, c) in [("parallel", par), ("perpendicular", perp)] {
        let v = c.values();
        let worst = (v[r.start] - 1.0).abs().max((v[r.end - 1] - 1.0).abs());
        if worst > opts.edge_tolerance {
            res.warnings.push(format!(
                "{name} curve differs from 1 by {worst:.3e} at the window edge; the integral is truncated"
            ));
        }
    }
    Ok(res)
}

/// Histogram form of [`cw_integral_extract`]: each histogram is scaled by
/// its asymptotic level (mean of the outer `edge_fraction` of bins on each
/// side) and Poisson errors are propagated, including the level's own.
pub fn cw_integral_extract_histograms(
    par: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
    edge_fraction: f64,
    opts: &CwExtractOptions,
) -> Result<IndistinguishabilityResult> {
    for hst in [par, perp] {
        if hst.regime() != Regime::CwNormalized {
            return Err(Error::argument(format!(
                "cw extraction needs cw_normalized histograms, got {}",
                hst.regime().as_str()
            )));
        }
    }
    if par.len() != perp.len()
        || par
            .bin_edges()
            .iter()
            .zip(perp.bin_edges())
            .any(|(a, b)| (a - b).abs() > 1e-9 * par.bin_width())
    {
        return Err(Error::argument(
            "parallel and perpendicular histograms have different bins",
        ));
    }
    let h = par.bin_width();
    let r = window_range(&par.centers(), h, opts.window)?;
    // A = h Σ (1 − cᵢ/L); var A = h² Σ cᵢ/L² + (h Σ cᵢ/L²)² · L/n_edge.
    let dip = |hst: &CoincidenceHistogram| -> Result<(f64, f64, f64)> {
        let (level, n_edge) = asymptote_level(hst, edge_fraction)?;
        let c = &hst.counts_f64()[r.clone()];
        let sum_c: f64 = c.iter().sum();
        let area = h * (c.len() as f64 - sum_c / level);
        let var = h * h * sum_c / (level * level)
            + (h * sum_c / (level * level)).powi(2) * level / n_edge as f64;
        Ok((area, var, level))
    };
    let (a_par, v_par, l_par) = dip(par)?;
    let (a_perp, v_perp, l_perp) = dip(perp)?;
    let value = ratio(a_par - a_perp, a_perp)?;
    // Ĩ = A∥/A⊥ − 1.
    let var = v_par / (a_perp * a_perp) + (a_par / (a_perp * a_perp)).powi(2) * v_perp;
    Ok(
        IndistinguishabilityResult::new(value, var.sqrt(), Method::CwIntegral)
            .detail("dip_integral_parallel", a_par)
            .detail("dip_integral_perpendicular", a_perp)
            .detail("asymptote_parallel", l_par)
            .detail("asymptote_perpendicular", l_perp),
    )
}

/// Ĩ(S) = M·Γ₁(1+S)/(Γ₁(1+S) + 2γ) for the effective two-level emitter.
pub fn i_tilde_analytic(s: f64, gamma1: f64, gamma_pd: f64, m: f64) -> f64 {
    let a = gamma1 * (1.0 + s);
    m * a / (a + 2.0 * gamma_pd)
}

/// Ĩ when the parallel and perpendicular runs were driven at S₁ and S₂.
pub fn i_tilde_mismatched(s1: f64, s2: f64, gamma1: f64, gamma_pd: f64) -> f64 {
    gamma1 * (1.0 + s2) / (gamma1 * (1.0 + s1) + 2.0 * gamma_pd) + (s2 - s1) / (1.0 + s1)
}

/// The two integrals behind Ĩ, normalized by Pₑ² and taken over τ ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedDips {
    pub excited_population: f64,
    /// ∫₀^∞ |g¹(τ)|²/Pₑ² dτ.
    pub coherent: f64,
    /// ∫₀^∞ (1 − G²(τ)/Pₑ²) dτ.
    pub antibunching: f64,
}

/// Evaluates [`IntegratedDips`] exactly from the master equation.
pub fn integrated_dips(model: &EmitterModel) -> Result<IntegratedDips> {
    let l = build_superoperator(&model.liouvillian);
    let rho = steady_state(&l)?;
    let sigma = &model.dipole;
    let sigma_dag = sigma.adjoint();
    let number = &sigma_dag * sigma;
    let pe = rho.expectation(&number).re;
    if !(pe > 1e-12) {
        return Err(Error::argument(format!(
            "no steady-state emission (excited population {pe:.3e})"
        )));
    }
    let d = model.liouvillian.dim();
    let coherent =
        integrated_abs_squared_correlator(&l, &rho, &sigma_dag, sigma, &CMatrix::identity(d, d))?;
    let g2 = integrated_correlator(&l, &rho, &number, sigma, &sigma_dag)?;
    Ok(IntegratedDips {
        excited_population: pe,
        coherent: coherent / (pe * pe),
        antibunching: -g2.re / (pe * pe),
    })
}

/// Ĩ from the master equation of any emitter model, with overlap `m`.
pub fn i_tilde_numeric(model: &EmitterModel, m: f64) -> Result<f64> {
    let d = integrated_dips(model)?;
    Ok(m * ratio(d.coherent, d.antibunching)?)
}

/// Ĩ of the coherently driven three-level emitter against its effective
/// two-level closed form at one saturation parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModelPoint {
    pub s: f64,
    pub two_level: f64,
    pub three_level: f64,
    /// |Ĩ₃ − Ĩ₂| / Ĩ₂.
    pub relative_deviation: f64,
}

pub fn i_tilde_pair(gamma1: f64, gamma_pd: f64, beta: f64, s: f64) -> Result<TwoModelPoint> {
    TwoLevelParams::new(gamma1, gamma_pd, s)?;
    let three = ThreeLevelParams::with_saturation(gamma1, gamma_pd, beta, s)?;
    let two_level = i_tilde_analytic(s, gamma1, gamma_pd, 1.0);
    let three_level = i_tilde_numeric(&EmitterModel::three_level(&three)?, 1.0)?;
    Ok(TwoModelPoint {
        s,
        two_level,
        three_level,
        relative_deviation: (three_level - two_level).abs() / two_level,
    })
}

/// Smallest S in `[s_lo, s_hi]` where the three-level Ĩ departs from the
/// two-level closed form by `threshold` (relative). Scans log-spaced points
/// for the first crossing, then bisects in log S to `rel_tol`.
pub fn breakdown_saturation(
    gamma1: f64,
    gamma_pd: f64,
    beta: f64,
    threshold: f64,
    s_lo: f64,
    s_hi: f64,
) -> Result<f64> {
    if !(threshold > 0.0) || !(s_lo > 0.0) || !(s_hi > s_lo) {
        return Err(Error::argument(
            "breakdown scan needs threshold > 0 and 0 < s_lo < s_hi",
        ));
    }
    let excess = |s: f64| -> Result<f64> {
        Ok(i_tilde_pair(gamma1, gamma_pd, beta, s)?.relative_deviation - threshold)
    };
    let n = 64;
    let ratio = (s_hi / s_lo).powf(1.0 / n as f64);
    let mut a = s_lo;
    let mut fa = excess(a)?;
    if fa >= 0.0 {
        return Ok(a);
    }
    for k in 1..=n {
        let b = if k == n { s_hi } else { s_lo * ratio.powi(k) };
        let fb = excess(b)?;
        if fb >= 0.0 {
            let (mut lo, mut hi) = (a, b);
            while hi / lo - 1.0 > 1e-10 {
                let mid = (lo * hi).sqrt();
                if excess(mid)? >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok((lo * hi).sqrt());
        }
        a = b;
        fa = fb;
    }
    Err(Error::Extraction(format!(
        "deviation stays below {threshold} up to S = {s_hi} (last excess {fa:e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{convolve_irf, cw_g2_analytic, DetectorIrf};
    use crate::curve::symmetric_grid;
    use crate::sim::synth_histogram;
    use crate::units::mhz_over_2pi;

    fn rates() -> (f64, f64) {
        (mhz_over_2pi(40.0), mhz_over_2pi(15.0))
    }

    fn curves(
        s: f64,
        v: f64,
        m: f64,
        gpd: f64,
        h_units: f64,
    ) -> (CorrelationCurve, CorrelationCurve) {
        let (g1, _) = rates();
        let a = g1 * (1.0 + s);
        let tau = symmetric_grid(20.0 / a, h_units / a);
        (
            cw_g2_analytic(&tau, g1, gpd, s, v, m).unwrap(),
            cw_g2_analytic(&tau, g1, gpd, s, v, 0.0).unwrap(),
        )
    }

    #[test]
    fn reference_point_integral() {
        let (g1, gpd) = rates();
        let (par, perp) = curves(1.3, 1.0, 0.96, gpd, 2e-3);
        let r = cw_integral_extract(&par, &perp, &CwExtractOptions::default()).unwrap();
        assert!((r.value - 0.96 * 92.0 / 122.0).abs() < 1e-4);
        assert!((r.value - i_tilde_analytic(1.3, g1, gpd, 0.96)).abs() < 1e-6);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn visibility_cancels() {
        let (_, gpd) = rates();
        let (a, b) = curves(1.3, 1.0, 0.9, gpd, 1e-2);
        let (c, d) = curves(1.3, 0.5, 0.9, gpd, 1e-2);
        let o = CwExtractOptions::default();
        let x = cw_integral_extract(&a, &b, &o).unwrap().value;
        let y = cw_integral_extract(&c, &d, &o).unwrap().value;
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn fourier_limited_unit_overlap_is_one() {
        let (par, perp) = curves(0.7, 1.0, 1.0, 0.0, 1e-2);
        let r = cw_integral_extract(&par, &perp, &CwExtractOptions::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_window_warns_and_bad_inputs_fail() {
        let (g1, gpd) = rates();
        let (par, perp) = curves(1.3, 1.0, 0.96, gpd, 1e-2);
        let o = CwExtractOptions {
            window: Some(1.0 / (g1 * 2.3)),
            ..Default::default()
        };
        assert!(!cw_integral_extract(&par, &perp, &o)
            .unwrap()
            .warnings
            .is_empty());
        let o = CwExtractOptions {
            window: Some(1.0),
            ..Default::default()
        };
        assert!(cw_integral_extract(&par, &perp, &o).is_err());
        let flat = par.with_values(vec![1.0; par.len()]).unwrap();
        assert!(matches!(
            cw_integral_extract(&par, &flat, &CwExtractOptions::default()),
            Err(Error::Extraction(_))
        ));
    }

    #[test]
    fn mismatched_drive_formula() {
        let (g1, gpd) = rates();
        let v = i_tilde_mismatched(1.3, 1.4, g1, gpd);
        assert!((v - (96.0 / 122.0 + 0.1 / 2.3)).abs() < 1e-12);
        assert!((v - 0.8304).abs() < 1e-4);
        assert_eq!(i_tilde_mismatched(0.0, 0.0, g1, 0.0), 1.0);
        for &s in &[0.0, 0.5, 3.0] {
            assert!(
                (i_tilde_mismatched(s, s, g1, gpd) - i_tilde_analytic(s, g1, gpd, 1.0)).abs()
                    < 1e-15
            );
        }
    }

    #[test]
    fn numeric_two_level_matches_closed_form() {
        let (g1, gpd) = rates();
        for &s in &[0.05, 1.3, 4.4, 30.0] {
            let m = EmitterModel::two_level(&TwoLevelParams::new(g1, gpd, s).unwrap()).unwrap();
            let d = integrated_dips(&m).unwrap();
            let a = g1 * (1.0 + s);
            assert!((d.coherent * (a + 2.0 * gpd) - 1.0).abs() < 1e-9);
            assert!((d.antibunching * a - 1.0).abs() < 1e-9);
            let num = i_tilde_numeric(&m, 0.96).unwrap();
            assert!((num - i_tilde_analytic(s, g1, gpd, 0.96)).abs() < 1e-9);
        }
    }

    #[test]
    fn three_level_agrees_at_weak_drive() {
        let (g1, gpd) = rates();
        let p = i_tilde_pair(g1, gpd, 2500.0 * g1, 1.0).unwrap();
        assert!(p.relative_deviation < 1e-3, "{p:?}");
        let strong = i_tilde_pair(g1, gpd, 2500.0 * g1, 500.0).unwrap();
        assert!(strong.three_level < strong.two_level);
    }

    #[test]
    fn histogram_extraction_is_consistent() {
        let (g1, gpd) = rates();
        let tau = symmetric_grid(15e-9, 0.02e-9);
        let irf = DetectorIrf::Gaussian { sigma: 0.35e-9 };
        let par = convolve_irf(
            &cw_g2_analytic(&tau, g1, gpd, 1.3, 1.0, 0.96).unwrap(),
            &irf,
        )
        .unwrap();
        let perp =
            convolve_irf(&cw_g2_analytic(&tau, g1, gpd, 1.3, 1.0, 0.0).unwrap(), &irf).unwrap();
        let hp = synth_histogram(&par, 2_000_000, 0.1e-9, 5).unwrap();
        let hq = synth_histogram(&perp, 2_000_000, 0.1e-9, 6).unwrap();
        let r =
            cw_integral_extract_histograms(&hp, &hq, 0.1, &CwExtractOptions::default()).unwrap();
        let want = i_tilde_analytic(1.3, g1, gpd, 0.96);
        // The asymptote's own error dominates: every bin is divided by it.
        assert!(r.uncertainty > 0.0 && r.uncertainty < 0.1, "{r:?}");
        assert!(
            (r.value - want).abs() < 4.0 * r.uncertainty,
            "{} ± {}",
            r.value,
            r.uncertainty
        );
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn analytic_i_tilde_bounded_and_increasing(
            g1 in 1e7f64..1e9, gpd_frac in 0.0f64..3.0, m in 0.0f64..1.0,
            s in 0.0f64..50.0, ds in 1e-3f64..10.0,
        ) {
            let gpd = gpd_frac * g1;
            let a = i_tilde_analytic(s, g1, gpd, m);
            let b = i_tilde_analytic(s + ds, g1, gpd, m);
            prop_assert!((0.0..=m + 1e-15).contains(&a));
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn mismatched_reduces_to_matched(g1 in 1e7f64..1e9, gpd_frac in 0.0f64..3.0, s in 0.0f64..50.0) {
            let gpd = gpd_frac * g1;
            let d = i_tilde_mismatched(s, s, g1, gpd) - i_tilde_analytic(s, g1, gpd, 1.0);
            prop_assert!(d.abs() < 1e-12);
        }
    }
}
