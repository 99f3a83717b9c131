use serde::{Deserialize, Serialize};

use crate::curve::CorrelationCurve;
use crate::error::{Error, Result};
use crate::quadrature::trapezoid;

/// Gaussian kernels are truncated at this many standard deviations.
const GAUSS_CUTOFF: f64 = 6.0;
/// Kernel half-support may not exceed this fraction of the grid span.
pub const MAX_IRF_FRACTION: f64 = 0.2;
const AREA_TOL: f64 = 1e-6;

/// Timing response of the detection chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum DetectorIrf {
    /// Gaussian jitter with standard deviation `sigma` (s).
    Gaussian { sigma: f64 },
    /// Measured response on its own uniform grid; unit area, nonnegative.
    Tabulated { table: CorrelationCurve },
}

impl DetectorIrf {
    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorIrf::Gaussian { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::validation(format!(
                        "IRF sigma must be > 0, got {sigma}"
                    )));
                }
            }
            DetectorIrf::Tabulated { table } => {
                if let Some(k) = table.values().iter().position(|&v| v < 0.0) {
                    return Err(Error::validation(format!(
                        "tabulated IRF is negative at index {k}"
                    )));
                }
                let area = trapezoid(table.values(), table.step());
                if (area - 1.0).abs() > AREA_TOL {
                    return Err(Error::validation(format!(
                        "tabulated IRF must have unit area, got {area}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest |τ| at which the response is nonzero (as represented).
    pub fn half_support(&self) -> f64 {
        match self {
            DetectorIrf::Gaussian { sigma } => GAUSS_CUTOFF * sigma,
            DetectorIrf::Tabulated { table } => {
                let t = table.tau();
                t[0].abs().max(t[t.len() - 1].abs())
            }
        }
    }
}

/// Discrete kernel for grid step `h`: odd length, centred, summing to 1.
pub fn irf_kernel(irf: &DetectorIrf, h: f64) -> Result<Vec<f64>> {
    irf.validate()?;
    let half = (irf.half_support() / h).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = (i as f64 - half as f64) * h;
            match irf {
                DetectorIrf::Gaussian { sigma } => (-0.5 * (t / sigma).powi(2)).exp(),
                DetectorIrf::Tabulated { table } => table.value_at(t).unwrap_or(0.0),
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::validation(
            "IRF has no weight on the curve's delay grid",
        ));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Direct-sum convolution with a centred kernel. Values beyond the grid are
/// taken equal to the nearest edge value, which keeps flat asymptotes flat.
pub fn convolve_values(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = values.len() as i64;
    let half = (kernel.len() / 2) as i64;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = (i + k as i64 - half).clamp(0, n - 1);
                    w * values[j as usize]
                })
                .sum()
        })
        .collect()
}

/// Curve convolved with the detector response.
pub fn convolve_irf(curve: &CorrelationCurve, irf: &DetectorIrf) -> Result<CorrelationCurve> {
    let span = curve.tau()[curve.len() - 1] - curve.tau()[0];
    if irf.half_support() > MAX_IRF_FRACTION * span {
        return Err(Error::argument(format!(
            "IRF support {:.3e} s exceeds {}% of the grid span {:.3e} s",
            irf.half_support(),
            MAX_IRF_FRACTION * 100.0,
            span
        )));
    }
    let kernel = irf_kernel(irf, curve.step())?;
    let mut out = curve.with_values(convolve_values(curve.values(), &kernel))?;
    out.set_label("irf_convolved", "true");
    Ok(out)
}
