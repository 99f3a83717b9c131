use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{solve, LmOptions, Problem};

use super::{IndistinguishabilityResult, Method};

/// One measured Ĩ at saturation parameter `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationPoint {
    pub s: f64,
    pub i_tilde: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub sigma_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationOptions {
    /// Fit the overlap M (otherwise M = 1).
    #[serde(default = "yes")]
    pub fit_m: bool,
    /// Fit γ, using the supplied value as the starting point.
    #[serde(default)]
    pub fit_gamma: bool,
    #[serde(default)]
    pub sigma_gamma1: f64,
    /// Uncertainty of a fixed γ; ignored when γ is fitted.
    #[serde(default)]
    pub sigma_gamma_pd: f64,
}

fn yes() -> bool {
    true
}

impl Default for ExtrapolationOptions {
    fn default() -> Self {
        ExtrapolationOptions {
            fit_m: true,
            fit_gamma: false,
            sigma_gamma1: 0.0,
            sigma_gamma_pd: 0.0,
        }
    }
}

fn shape(s: f64, gamma1: f64, gamma_pd: f64) -> f64 {
    let a = gamma1 * (1.0 + s);
    a / (a + 2.0 * gamma_pd)
}

struct Estimate {
    m: f64,
    gamma_pd: f64,
    chi2: f64,
}

fn estimate(
    s: &[f64],
    y: &[f64],
    w: &[f64],
    gamma1: f64,
    gamma_pd: f64,
    opts: &ExtrapolationOptions,
) -> Result<Estimate> {
    let chi2 = |m: f64, g: f64| -> f64 {
        s.iter()
            .zip(y)
            .zip(w)
            .map(|((&s, &y), &w)| w * (y - m * shape(s, gamma1, g)).powi(2))
            .sum()
    };
    let best_m = |g: f64| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((&s, &y), &w) in s.iter().zip(y).zip(w) {
            let f = shape(s, gamma1, g);
            num += w * y * f;
            den += w * f * f;
        }
        num / den
    };
    if !opts.fit_gamma {
        let m = if opts.fit_m { best_m(gamma_pd) } else { 1.0 };
        return Ok(Estimate {
            m,
            gamma_pd,
            chi2: chi2(m, gamma_pd),
        });
    }
    let (names, p0, lower, upper): (Vec<&str>, Vec<f64>, Vec<f64>, Vec<f64>) = if opts.fit_m {
        (
            vec!["m", "gamma_pd"],
            vec![best_m(gamma_pd), gamma_pd],
            vec![f64::NEG_INFINITY, 0.0],
            vec![f64::INFINITY; 2],
        )
    } else {
        (
            vec!["gamma_pd"],
            vec![gamma_pd],
            vec![0.0],
            vec![f64::INFINITY],
        )
    };
    let mut problem = Problem::new(&names, &p0, y, w).with_bounds(&lower, &upper);
    // γ may start at zero; measure it against Γ₁.
    *problem.scales.last_mut().unwrap() = gamma1;
    let fit_m = opts.fit_m;
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        let (m, g) = if fit_m { (p[0], p[1]) } else { (1.0, p[0]) };
        Ok(s.iter().map(|&s| m * shape(s, gamma1, g)).collect())
    };
    let r = solve(&problem, &model, None, LmOptions::default())?;
    let (m, g) = if fit_m {
        (r.params[0], r.params[1])
    } else {
        (1.0, r.params[0])
    };
    Ok(Estimate {
        m,
        gamma_pd: g,
        chi2: r.chi2,
    })
}

/// Fits Ĩ(S) = M·Γ₁(1+S)/(Γ₁(1+S)+2γ) to measured points and returns
/// 𝓘 = Ĩ(0). Weighted by 1/σ² when every point has σ > 0.
///
/// The uncertainty is first-order propagation of the point errors (σ on Ĩ
/// and on S) and of σ(Γ₁), σ(γ) through the whole estimator.
pub fn extrapolate_to_zero(
    points: &[ExtrapolationPoint],
    gamma1: f64,
    gamma_pd: f64,
    opts: &ExtrapolationOptions,
) -> Result<IndistinguishabilityResult> {
    if points.is_empty() {
        return Err(Error::argument("extrapolation needs at least one point"));
    }
    if !opts.fit_m && !opts.fit_gamma {
        return Err(Error::argument(
            "nothing to fit: enable fit_m and/or fit_gamma",
        ));
    }
    if !(gamma1 > 0.0) || !(gamma_pd >= 0.0) {
        return Err(Error::argument(
            "extrapolation needs gamma1 > 0 and gamma_pd >= 0",
        ));
    }
    for p in points {
        if !(p.s >= 0.0) || !p.i_tilde.is_finite() || !(p.sigma >= 0.0) || !(p.sigma_s >= 0.0) {
            return Err(Error::argument(format!(
                "invalid extrapolation point {p:?}"
            )));
        }
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.s).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let n_free = opts.fit_m as usize + opts.fit_gamma as usize;
    if distinct.len() < n_free {
        return Err(Error::Extraction(format!(
            "rank-deficient extrapolation: {} free parameters but {} distinct S value(s)",
            n_free,
            distinct.len()
        )));
    }
    let weighted = points.iter().all(|p| p.sigma > 0.0);
    let w: Vec<f64> = points
        .iter()
        .map(|p| {
            if weighted {
                1.0 / (p.sigma * p.sigma)
            } else {
                1.0
            }
        })
        .collect();

    // Inputs: Ĩ_i, S_i, then Γ₁ and γ.
    let n = points.len();
    let mut x: Vec<f64> = points
        .iter()
        .map(|p| p.i_tilde)
        .chain(points.iter().map(|p| p.s))
        .collect();
    x.push(gamma1);
    x.push(gamma_pd);
    let mut sig: Vec<f64> = points
        .iter()
        .map(|p| p.sigma)
        .chain(points.iter().map(|p| p.sigma_s))
        .collect();
    sig.push(opts.sigma_gamma1);
    sig.push(if opts.fit_gamma {
        0.0
    } else {
        opts.sigma_gamma_pd
    });

    let run = |x: &[f64]| -> Result<(f64, Estimate)> {
        let e = estimate(&x[n..2 * n], &x[..n], &w, x[2 * n], x[2 * n + 1], opts)?;
        Ok((e.m * shape(0.0, x[2 * n], e.gamma_pd), e))
    };
    let (value, est) = run(&x)?;
    let mut var = 0.0;
    for k in 0..x.len() {
        if sig[k] == 0.0 {
            continue;
        }
        let h = 1e-6 * x[k].abs().max(sig[k]);
        let keep = x[k];
        x[k] = keep + h;
        let up = run(&x)?.0;
        x[k] = keep - h;
        let down = run(&x)?.0;
        x[k] = keep;
        var += ((up - down) / (2.0 * h) * sig[k]).powi(2);
    }
    let dof = n.saturating_sub(n_free);
    let mut res = IndistinguishabilityResult::new(value, var.sqrt(), Method::CwExtrapolated)
        .detail("m", est.m)
        .detail("gamma_pd", est.gamma_pd)
        .detail("chi2", est.chi2)
        .detail("n_points", n as f64);
    if dof > 0 {
        res.details
            .insert("reduced_chi2".into(), est.chi2 / dof as f64);
    }
    if n == 1 {
        res.s_at_measurement = Some(points[0].s);
    }
    if !weighted && n > 1 {
        res.warnings.push(
            "points without uncertainties: unweighted fit, uncertainty omits point scatter".into(),
        );
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indist::i_tilde_analytic;
    use crate::units::mhz_over_2pi;

    fn rates() -> (f64, f64) {
        (mhz_over_2pi(40.0), mhz_over_2pi(15.0))
    }

    fn pt(s: f64, i: f64, sigma: f64) -> ExtrapolationPoint {
        ExtrapolationPoint {
            s,
            i_tilde: i,
            sigma,
            sigma_s: 0.0,
        }
    }

    #[test]
    fn single_point_inverts_closed_form() {
        let (g1, gpd) = rates();
        let i = 0.96 * 92.0 / 122.0;
        let r = extrapolate_to_zero(&[pt(1.3, i, 0.0)], g1, gpd, &Default::default()).unwrap();
        assert!((r.details["m"] - 0.96).abs() < 1e-12);
        assert!((r.value - 0.96 * 40.0 / 70.0).abs() < 1e-12);
        assert!((r.value - 0.5486).abs() < 1e-4);
        assert_eq!(r.s_at_measurement, Some(1.3));
    }

    #[test]
    fn scaling_data_scales_result() {
        let (g1, gpd) = rates();
        let pts = [pt(1.3, 0.70, 0.01), pt(4.4, 0.85, 0.02)];
        let scaled: Vec<_> = pts
            .iter()
            .map(|p| pt(p.s, 0.9 * p.i_tilde, 0.9 * p.sigma))
            .collect();
        let a = extrapolate_to_zero(&pts, g1, gpd, &Default::default()).unwrap();
        let b = extrapolate_to_zero(&scaled, g1, gpd, &Default::default()).unwrap();
        assert!((b.details["m"] / a.details["m"] - 0.9).abs() < 1e-12);
        assert!((b.value / a.value - 0.9).abs() < 1e-12);
        assert!((b.uncertainty / a.uncertainty - 0.9).abs() < 1e-6);
    }

    #[test]
    fn weighted_m_matches_hand_formula() {
        let (g1, gpd) = rates();
        let pts = [pt(1.3, 0.71, 0.01), pt(4.4, 0.86, 0.02)];
        let r = extrapolate_to_zero(&pts, g1, gpd, &Default::default()).unwrap();
        let f: Vec<f64> = pts
            .iter()
            .map(|p| i_tilde_analytic(p.s, g1, gpd, 1.0))
            .collect();
        let w: Vec<f64> = pts.iter().map(|p| 1.0 / (p.sigma * p.sigma)).collect();
        let sw = w[0] * f[0] * f[0] + w[1] * f[1] * f[1];
        let m = (w[0] * f[0] * pts[0].i_tilde + w[1] * f[1] * pts[1].i_tilde) / sw;
        let f0 = i_tilde_analytic(0.0, g1, gpd, 1.0);
        assert!((r.details["m"] - m).abs() < 1e-12);
        assert!((r.uncertainty - f0 / sw.sqrt()).abs() < 1e-6 * r.uncertainty);
    }

    #[test]
    fn gamma_can_be_fitted() {
        let (g1, gpd) = rates();
        let pts: Vec<_> = [0.5, 1.3, 4.4]
            .iter()
            .map(|&s| pt(s, i_tilde_analytic(s, g1, gpd, 0.96), 0.01))
            .collect();
        let opts = ExtrapolationOptions {
            fit_gamma: true,
            ..Default::default()
        };
        let r = extrapolate_to_zero(&pts, g1, 0.5 * gpd, &opts).unwrap();
        assert!((r.details["gamma_pd"] / gpd - 1.0).abs() < 1e-6);
        assert!((r.details["m"] - 0.96).abs() < 1e-6);
        assert!((r.value - 0.96 * 40.0 / 70.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_points_are_rank_deficient() {
        let (g1, gpd) = rates();
        let opts = ExtrapolationOptions {
            fit_gamma: true,
            ..Default::default()
        };
        let pts = [pt(1.3, 0.7, 0.01), pt(1.3, 0.72, 0.01)];
        let err = extrapolate_to_zero(&pts, g1, gpd, &opts).unwrap_err();
        assert!(err.to_string().contains("rank-deficient"));
        assert!(extrapolate_to_zero(&[], g1, gpd, &Default::default()).is_err());
    }

    #[test]
    fn rate_uncertainties_widen_the_band() {
        let (g1, gpd) = rates();
        let pts = [pt(1.3, 0.71, 0.01), pt(4.4, 0.86, 0.02)];
        let a = extrapolate_to_zero(&pts, g1, gpd, &Default::default()).unwrap();
        let opts = ExtrapolationOptions {
            sigma_gamma_pd: mhz_over_2pi(5.0),
            ..Default::default()
        };
        let b = extrapolate_to_zero(&pts, g1, gpd, &opts).unwrap();
        assert!(b.uncertainty > a.uncertainty);
        assert_eq!(a.value, b.value);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::indist::i_tilde_analytic;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn noiseless_points_recover_zero_drive_value(
            m in 0.2f64..1.0, gpd_frac in 0.05f64..2.0,
            s in proptest::collection::vec(0.1f64..10.0, 2..6),
        ) {
            let g1 = 2.5e8;
            let gpd = gpd_frac * g1;
            let points: Vec<ExtrapolationPoint> = s
                .iter()
                .map(|&s| ExtrapolationPoint { s, i_tilde: i_tilde_analytic(s, g1, gpd, m), sigma: 0.0, sigma_s: 0.0 })
                .collect();
            let r = extrapolate_to_zero(&points, g1, gpd, &ExtrapolationOptions::default()).unwrap();
            prop_assert!((r.value - i_tilde_analytic(0.0, g1, gpd, m)).abs() < 1e-10);
        }
    }
}
