use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_with_breakpoints, Tolerance};

const WEIGHT_TOL: f64 = 1e-9;
/// Gaussian filter bands are integrated out to this many FWHM from centre.
const BAND_CUTOFF: f64 = 8.0;
const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1/(2√(2 ln 2))

/// A spectral line; the ZPL is Lorentzian, all other lines Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub weight: f64,
}

/// Phonon sideband as a Poisson-weighted series of Gaussian replicas of
/// the ZPL, red-shifted by `k·mode_spacing_nm` for k = 1, 2, ….
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSideband {
    /// Mean phonon number of the Poisson distribution.
    pub mean: f64,
    pub mode_spacing_nm: f64,
    pub line_fwhm_nm: f64,
    pub weight: f64,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
}

fn default_max_order() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumModel {
    pub zpl: Line,
    #[serde(default)]
    pub sideband: Option<PoissonSideband>,
    #[serde(default)]
    pub vibronic_lines: Vec<Line>,
}

fn lorentzian(x: f64, fwhm: f64) -> f64 {
    let g = 0.5 * fwhm;
    g / (std::f64::consts::PI * (x * x + g * g))
}

fn gaussian(x: f64, fwhm: f64) -> f64 {
    let s = fwhm * FWHM_TO_SIGMA;
    (-0.5 * (x / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

impl SpectrumModel {
    /// Single-molecule-like emission at 784.45 nm: a 70 MHz ZPL carrying 35%
    /// of the emission, a Poisson phonon wing and three vibronic lines.
    pub fn dbt_like() -> Self {
        SpectrumModel {
            zpl: Line {
                center_nm: 784.45,
                fwhm_nm: 1.436e-4,
                weight: 0.35,
            },
            sideband: Some(PoissonSideband {
                mean: 1.5,
                mode_spacing_nm: 0.6,
                line_fwhm_nm: 0.5,
                weight: 0.35,
                max_order: default_max_order(),
            }),
            vibronic_lines: vec![
                Line {
                    center_nm: 795.0,
                    fwhm_nm: 0.3,
                    weight: 0.1,
                },
                Line {
                    center_nm: 800.0,
                    fwhm_nm: 0.3,
                    weight: 0.1,
                },
                Line {
                    center_nm: 805.0,
                    fwhm_nm: 0.3,
                    weight: 0.1,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut lines = vec![("zpl", self.zpl)];
        lines.extend(self.vibronic_lines.iter().map(|l| ("vibronic line", *l)));
        for (name, l) in &lines {
            if !(l.fwhm_nm > 0.0) || !(l.weight >= 0.0) || !l.center_nm.is_finite() {
                return Err(Error::validation(format!(
                    "{name} needs fwhm > 0 and weight >= 0"
                )));
            }
        }
        let mut total: f64 = lines.iter().map(|(_, l)| l.weight).sum();
        if let Some(sb) = &self.sideband {
            if !(sb.mean > 0.0) || !(sb.mode_spacing_nm > 0.0) || !(sb.line_fwhm_nm > 0.0) {
                return Err(Error::validation(
                    "sideband needs mean, mode spacing and line width > 0",
                ));
            }
            if !(sb.weight >= 0.0) || sb.max_order == 0 {
                return Err(Error::validation(
                    "sideband needs weight >= 0 and max_order >= 1",
                ));
            }
            total += sb.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::validation(format!(
                "spectral weights must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    /// Gaussian lines other than the ZPL as (center, fwhm, weight).
    fn incoherent_lines(&self) -> Vec<Line> {
        let mut out = self.vibronic_lines.clone();
        if let Some(sb) = &self.sideband {
            // Poisson weights for k ≥ 1, renormalized to the sideband weight.
            let mut p = (-sb.mean).exp();
            let mut ws = Vec::with_capacity(sb.max_order);
            for k in 1..=sb.max_order {
                p *= sb.mean / k as f64;
                ws.push(p);
            }
            let norm: f64 = ws.iter().sum();
            for (k, w) in ws.iter().enumerate() {
                out.push(Line {
                    center_nm: self.zpl.center_nm + (k + 1) as f64 * sb.mode_spacing_nm,
                    fwhm_nm: sb.line_fwhm_nm,
                    weight: sb.weight * w / norm,
                });
            }
        }
        out
    }
}

/// Spectral transmission towards the detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterModel {
    AllPass,
    /// Narrow band collected off a reflective notch filter: Gaussian of
    /// FWHM `width_nm`, peak transmission `depth`.
    Notch {
        center_nm: f64,
        #[serde(default = "default_notch_width")]
        width_nm: f64,
        #[serde(default = "default_depth")]
        depth: f64,
    },
    /// Linear interpolation of measured transmission; zero outside.
    Tabulated {
        wavelength_nm: Vec<f64>,
        transmission: Vec<f64>,
    },
}

fn default_notch_width() -> f64 {
    0.15
}

fn default_depth() -> f64 {
    1.0
}

impl FilterModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FilterModel::AllPass => Ok(()),
            FilterModel::Notch {
                center_nm,
                width_nm,
                depth,
            } => {
                if !(*width_nm > 0.0) || !center_nm.is_finite() || !(0.0..=1.0).contains(depth) {
                    return Err(Error::validation(
                        "notch filter needs width > 0 and depth in [0, 1]",
                    ));
                }
                Ok(())
            }
            FilterModel::Tabulated {
                wavelength_nm,
                transmission,
            } => {
                if wavelength_nm.len() != transmission.len() || wavelength_nm.len() < 2 {
                    return Err(Error::validation(
                        "tabulated filter needs matching arrays of at least two points",
                    ));
                }
                if wavelength_nm.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::validation(
                        "tabulated filter wavelengths must increase",
                    ));
                }
                if transmission.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::validation("filter transmission must lie in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn transmission(&self, nm: f64) -> f64 {
        match self {
            FilterModel::AllPass => 1.0,
            FilterModel::Notch {
                center_nm,
                width_nm,
                depth,
            } => {
                let s = width_nm * FWHM_TO_SIGMA;
                depth * (-0.5 * ((nm - center_nm) / s).powi(2)).exp()
            }
            FilterModel::Tabulated {
                wavelength_nm: x,
                transmission: y,
            } => {
                if nm < x[0] || nm > x[x.len() - 1] {
                    return 0.0;
                }
                let k = x.partition_point(|&v| v <= nm).clamp(1, x.len() - 1);
                let f = (nm - x[k - 1]) / (x[k] - x[k - 1]);
                y[k - 1] * (1.0 - f) + y[k] * f
            }
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self {
            FilterModel::AllPass => None,
            FilterModel::Notch {
                center_nm,
                width_nm,
                ..
            } => Some((
                center_nm - BAND_CUTOFF * width_nm,
                center_nm + BAND_CUTOFF * width_nm,
            )),
            FilterModel::Tabulated { wavelength_nm, .. } => {
                Some((wavelength_nm[0], wavelength_nm[wavelength_nm.len() - 1]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentFraction {
    pub alpha: f64,
    pub alpha_squared: f64,
}

/// Fraction α of the transmitted emission that is in the ZPL, and α², the
/// probability that both photons of a pair are ZPL photons.
pub fn coherent_fraction(spec: &SpectrumModel, filt: &FilterModel) -> Result<CoherentFraction> {
    spec.validate()?;
    filt.validate()?;
    let lines = spec.incoherent_lines();
    let (zpl, other) = match filt.support() {
        None => (spec.zpl.weight, lines.iter().map(|l| l.weight).sum::<f64>()),
        Some((lo, hi)) => {
            let z = spec.zpl;
            let mut points = vec![lo, hi];
            for k in [0.0, 1.0, 10.0, 100.0] {
                points.push(z.center_nm - k * z.fwhm_nm);
                points.push(z.center_nm + k * z.fwhm_nm);
            }
            for l in &lines {
                points.extend([
                    l.center_nm - l.fwhm_nm,
                    l.center_nm,
                    l.center_nm + l.fwhm_nm,
                ]);
            }
            if let FilterModel::Tabulated { wavelength_nm, .. } = filt {
                points.extend(wavelength_nm.iter().copied());
            }
            points.retain(|p| *p >= lo && *p <= hi);
            points.sort_by(f64::total_cmp);
            points.dedup();
            let tol = Tolerance {
                rel: 1e-10,
                abs: 1e-15,
                max_intervals: 20_000,
            };
            let mut zf =
                |x: f64| z.weight * lorentzian(x - z.center_nm, z.fwhm_nm) * filt.transmission(x);
            let mut of = |x: f64| {
                filt.transmission(x)
                    * lines
                        .iter()
                        .map(|l| l.weight * gaussian(x - l.center_nm, l.fwhm_nm))
                        .sum::<f64>()
            };
            (
                integrate_with_breakpoints(&mut zf, &points, tol)?,
                integrate_with_breakpoints(&mut of, &points, tol)?,
            )
        }
    };
    let total = zpl + other;
    if !(total > 0.0) {
        return Err(Error::Extraction("filter transmits no emission".into()));
    }
    let alpha = zpl / total;
    Ok(CoherentFraction {
        alpha,
        alpha_squared: alpha * alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_zpl() -> SpectrumModel {
        SpectrumModel {
            zpl: Line {
                center_nm: 780.0,
                fwhm_nm: 0.001,
                weight: 0.5,
            },
            sideband: None,
            vibronic_lines: vec![Line {
                center_nm: 790.0,
                fwhm_nm: 0.5,
                weight: 0.5,
            }],
        }
    }

    #[test]
    fn all_pass_gives_zpl_weight() {
        let a = coherent_fraction(&half_zpl(), &FilterModel::AllPass).unwrap();
        assert_eq!(a.alpha, 0.5);
        assert_eq!(a.alpha_squared, 0.25);
    }

    #[test]
    fn band_pass_around_zpl_only() {
        let f = FilterModel::Tabulated {
            wavelength_nm: vec![779.0, 781.0],
            transmission: vec![1.0, 1.0],
        };
        let a = coherent_fraction(&half_zpl(), &f).unwrap();
        assert!((a.alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dbt_like_notch() {
        let s = SpectrumModel::dbt_like();
        s.validate().unwrap();
        let f = FilterModel::Notch {
            center_nm: 784.45,
            width_nm: 0.15,
            depth: 1.0,
        };
        let a = coherent_fraction(&s, &f).unwrap();
        assert!(a.alpha >= 0.99, "alpha {}", a.alpha);
        assert!(a.alpha < 1.0);
    }

    #[test]
    fn zero_transmission_is_an_error() {
        let f = FilterModel::Notch {
            center_nm: 700.0,
            width_nm: 0.01,
            depth: 0.0,
        };
        assert!(coherent_fraction(&half_zpl(), &f).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut s = half_zpl();
        s.zpl.weight = 0.6;
        assert!(s.validate().is_err());
    }
}
