use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::lm::{solve, FitResult, LmOptions, Problem};

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::argument(format!(
            "x has {} points but y has {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::argument(format!(
            "need at least {min} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::argument("data contain non-finite values"));
    }
    Ok(())
}

fn weights_from_sigma(sigma: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match sigma {
        None => Ok(vec![1.0; n]),
        Some(s) if s.len() == n && s.iter().all(|v| *v > 0.0) => {
            Ok(s.iter().map(|v| 1.0 / (v * v)).collect())
        }
        Some(_) => Err(Error::argument("sigma must be positive, one per point")),
    }
}

/// `A·(Γ/2)²/((x−x₀)² + (Γ/2)²) + c` and its gradient in (x₀, Γ, A, c).
pub fn lorentzian(x: f64, p: &[f64]) -> (f64, [f64; 4]) {
    let (x0, fwhm, amp, off) = (p[0], p[1], p[2], p[3]);
    let q = 0.25 * fwhm * fwhm;
    let dx = x - x0;
    let d = dx * dx + q;
    let shape = q / d;
    let grad = [
        amp * q * 2.0 * dx / (d * d),
        amp * dx * dx / (d * d) * 0.5 * fwhm,
        shape,
        1.0,
    ];
    (amp * shape + off, grad)
}

/// Lorentzian line fit; parameters `center`, `fwhm`, `amplitude`, `offset`.
pub fn fit_lorentzian(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    check_xy(x, y, 5)?;
    let w = weights_from_sigma(sigma, x.len())?;
    let (kmax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let offset = sorted[sorted.len() / 10];
    if !(ymax > offset) {
        return Err(Error::argument("no peak above the baseline"));
    }
    let half = offset + 0.5 * (ymax - offset);
    let above: Vec<f64> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v >= half)
        .map(|(x, _)| *x)
        .collect();
    let span = above.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - above.iter().cloned().fold(f64::INFINITY, f64::min);
    let xr = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - x.iter().cloned().fold(f64::INFINITY, f64::min);
    let fwhm0 = if span > 0.0 {
        span
    } else {
        xr / x.len() as f64
    };
    let p0 = [x[kmax], fwhm0, ymax - offset, offset];
    let mut problem = Problem::new(&["center", "fwhm", "amplitude", "offset"], &p0, y, &w)
        .with_bounds(
            &[f64::NEG_INFINITY, 0.0, 0.0, f64::NEG_INFINITY],
            &[f64::INFINITY; 4],
        );
    problem.scales = vec![fwhm0, fwhm0, p0[2], p0[2]];
    let model =
        |p: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().map(|&t| lorentzian(t, p).0).collect()) };
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(x.len(), 4, |i, j| {
            lorentzian(x[i], p).1[j]
        }))
    };
    solve(&problem, &model, Some(&jac), LmOptions::default())
}

fn check_spread(p: &[f64]) -> Result<()> {
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::argument(
            "degenerate data: all points at the same power",
        ));
    }
    if lo < 0.0 {
        return Err(Error::argument("powers must be non-negative"));
    }
    Ok(())
}

/// Fit of Δν = (Γ₂/π)√(1 + P/P_sat) to (power, FWHM in Hz) points;
/// parameters `gamma2` (rad/s) and `p_sat` (units of P).
pub fn fit_linewidth_vs_power(
    power: &[f64],
    linewidth: &[f64],
    sigma: Option<&[f64]>,
) -> Result<FitResult> {
    check_xy(power, linewidth, 3)?;
    check_spread(power)?;
    let w = weights_from_sigma(sigma, power.len())?;
    let pi = std::f64::consts::PI;
    let (kmin, kmax) = extremes(power);
    let g0 = pi * linewidth[kmin];
    let ratio = (linewidth[kmax] / linewidth[kmin]).powi(2) - 1.0;
    let psat0 = if ratio > 1e-3 {
        (power[kmax] - power[kmin]) / ratio
    } else {
        power[kmax]
    };
    let mut problem = Problem::new(&["gamma2", "p_sat"], &[g0, psat0], linewidth, &w)
        .with_bounds(&[0.0, f64::MIN_POSITIVE], &[f64::INFINITY; 2]);
    problem.scales = vec![g0, psat0];
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(power
            .iter()
            .map(|&u| p[0] / pi * (1.0 + u / p[1]).sqrt())
            .collect())
    };
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(power.len(), 2, |i, j| {
            let root = (1.0 + power[i] / p[1]).sqrt();
            match j {
                0 => root / pi,
                _ => -p[0] / pi * 0.5 / root * power[i] / (p[1] * p[1]),
            }
        }))
    };
    solve(&problem, &model, Some(&jac), LmOptions::default())
}

/// Fit of R = R∞·(P/P_sat)/(1 + P/P_sat); parameters `r_inf`, `p_sat`.
pub fn fit_saturation(power: &[f64], rate: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    check_xy(power, rate, 3)?;
    check_spread(power)?;
    let w = weights_from_sigma(sigma, power.len())?;
    let (_, kmax) = extremes(power);
    let rmax = rate.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(rmax > 0.0) {
        return Err(Error::argument("rates must include a positive value"));
    }
    // Initial guess from the double-reciprocal (Lineweaver–Burk) line
    // 1/R = 1/R∞ + (P_sat/R∞)/P, falling back to crude values.
    let pts: Vec<(f64, f64)> = power
        .iter()
        .zip(rate)
        .filter(|(p, r)| **p > 0.0 && **r > 0.0)
        .map(|(p, r)| (1.0 / p, 1.0 / r))
        .collect();
    let (mut r0, mut ps0) = (1.5 * rmax, power[kmax]);
    if pts.len() >= 2 {
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        if det != 0.0 {
            let slope = (n * sxy - sx * sy) / det;
            let icpt = (sy - slope * sx) / n;
            if icpt > 0.0 && slope > 0.0 {
                r0 = 1.0 / icpt;
                ps0 = slope / icpt;
            }
        }
    }
    let mut problem = Problem::new(&["r_inf", "p_sat"], &[r0, ps0], rate, &w)
        .with_bounds(&[0.0, f64::MIN_POSITIVE], &[f64::INFINITY; 2]);
    problem.scales = vec![r0, ps0];
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(power
            .iter()
            .map(|&u| {
                let s = u / p[1];
                p[0] * s / (1.0 + s)
            })
            .collect())
    };
    let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(power.len(), 2, |i, j| {
            let s = power[i] / p[1];
            match j {
                0 => s / (1.0 + s),
                _ => -p[0] / (1.0 + s).powi(2) * power[i] / (p[1] * p[1]),
            }
        }))
    };
    solve(&problem, &model, Some(&jac), LmOptions::default())
}

fn extremes(v: &[f64]) -> (usize, usize) {
    let kmin = (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let kmax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    (kmin, kmax)
}
