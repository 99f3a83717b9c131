//! Run configuration: a JSON document describing the emitter, optics,
//! detector, acquisition and extraction. Every rate carries an explicit
//! unit; errors name the offending field path (e.g. `emitter.gamma1`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::{DetectorIrf, InterferometerParams, PulsedMethod, DEFAULT_SIDE_PEAKS};
use crate::emitter::{EmitterModel, ThreeLevelParams, TwoLevelParams};
use crate::error::{Error, Result};
use crate::indist::SidebandSpec;
use crate::io::bytes_sha256;
use crate::units::Rate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRegime {
    Cw,
    Pulsed,
    Hbt,
}

impl RunRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunRegime::Cw => "cw",
            RunRegime::Pulsed => "pulsed",
            RunRegime::Hbt => "hbt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitterKind {
    #[default]
    TwoLevel,
    ThreeLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    #[serde(default)]
    pub model: EmitterKind,
    pub gamma1: Rate,
    pub gamma_pd: Rate,
    /// Pump-level decay; three-level model only.
    #[serde(default)]
    pub beta: Option<Rate>,
    /// Saturation parameter when `extraction.s_values` is empty.
    #[serde(default)]
    pub s: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_half_span() -> f64 {
    15e-9
}

fn default_step() -> f64 {
    0.01e-9
}

fn default_side_peaks() -> usize {
    DEFAULT_SIDE_PEAKS
}

/// How model curves are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Antibunching visibility V (ignored when an interferometer is given).
    #[serde(default = "one")]
    pub v: f64,
    /// Parallel-polarization mode overlap M.
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "default_half_span")]
    pub half_span_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
    /// Laser repetition period; with an interferometer, pulsed curves
    /// become a comb.
    #[serde(default)]
    pub rep_period_s: Option<f64>,
    #[serde(default)]
    pub method: Option<PulsedMethod>,
    #[serde(default = "default_side_peaks")]
    pub n_side_peaks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            v: 1.0,
            m: 1.0,
            half_span_s: default_half_span(),
            step_s: default_step(),
            rep_period_s: None,
            method: None,
            n_side_peaks: DEFAULT_SIDE_PEAKS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Coincidences per histogram (the perpendicular one, for pulsed runs).
    pub total_counts: u64,
    pub bin_width_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CwEstimator {
    /// Fit the IRF-convolved model, integrate the deconvolved fit.
    #[default]
    Fit,
    /// Integrate the asymptote-normalized histograms directly.
    Direct,
}

fn default_edge_fraction() -> f64 {
    crate::sim::ASYMPTOTE_EDGE_FRACTION
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default)]
    pub s_values: Vec<f64>,
    /// cw integration half-width; default ±20/(Γ₁(1+S)) clipped to the data.
    #[serde(default)]
    pub window_s: Option<f64>,
    /// Pulsed central-feature half-width; whole record when absent.
    #[serde(default)]
    pub central_window_s: Option<f64>,
    #[serde(default = "default_edge_fraction")]
    pub edge_fraction: f64,
    #[serde(default)]
    pub cw_estimator: CwEstimator,
    /// Fit V on the perpendicular data instead of holding it at
    /// `model.v` (an independent HBT measurement).
    #[serde(default)]
    pub fit_v: bool,
    #[serde(default = "yes")]
    pub fit_m: bool,
    #[serde(default)]
    pub fit_gamma: bool,
    #[serde(default)]
    pub sigma_gamma1: Option<Rate>,
    #[serde(default)]
    pub sigma_gamma_pd: Option<Rate>,
    /// Interferometer delay mismatch to correct for, seconds.
    #[serde(default)]
    pub delay_mismatch_s: Option<f64>,
    #[serde(default)]
    pub sideband: Option<SidebandSpec>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            s_values: Vec::new(),
            window_s: None,
            central_window_s: None,
            edge_fraction: default_edge_fraction(),
            cw_estimator: CwEstimator::Fit,
            fit_v: false,
            fit_m: true,
            fit_gamma: false,
            sigma_gamma1: None,
            sigma_gamma_pd: None,
            delay_mismatch_s: None,
            sideband: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub emitter: EmitterConfig,
    pub regime: RunRegime,
    #[serde(default)]
    pub interferometer: Option<InterferometerParams>,
    #[serde(default)]
    pub detector: Option<DetectorIrf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub acquisition: Option<AcquisitionConfig>,
    #[serde(default)]
    pub extraction: ExtractionConfig,
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Validation(m) | Error::Argument(m) => Error::Validation(format!("{path}: {m}")),
        other => other,
    }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("{path}: must be > 0, got {x}")))
    }
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let msg = e.inner().to_string();
            // Missing fields are reported at their parent; name the field.
            if let Some(rest) = msg.strip_prefix("missing field `") {
                let field = rest.split('`').next().unwrap_or_default();
                path = if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            Error::Validation(format!("{path}: {msg}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; also returns the SHA-256 of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse {
            path: path.into(),
            line: 1,
            msg: "config is not valid UTF-8".into(),
        })?;
        Ok((Self::from_json(&text)?, bytes_sha256(&bytes)))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.emitter;
        let g1 = e.gamma1.per_second().map_err(|x| at("emitter.gamma1", x))?;
        positive("emitter.gamma1", g1)?;
        let gpd = e
            .gamma_pd
            .per_second()
            .map_err(|x| at("emitter.gamma_pd", x))?;
        if !(gpd >= 0.0) {
            return Err(Error::validation(format!(
                "emitter.gamma_pd: must be >= 0, got {gpd}"
            )));
        }
        match (e.model, &e.beta) {
            (EmitterKind::ThreeLevel, None) => {
                return Err(Error::validation(
                    "emitter.beta: required for the three_level model",
                ))
            }
            (EmitterKind::ThreeLevel, Some(b)) => positive(
                "emitter.beta",
                b.per_second().map_err(|x| at("emitter.beta", x))?,
            )?,
            (EmitterKind::TwoLevel, Some(_)) => {
                return Err(Error::validation(
                    "emitter.beta: only valid for the three_level model",
                ))
            }
            _ => {}
        }
        if let Some(s) = e.s {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::validation(format!(
                    "emitter.s: must be >= 0, got {s}"
                )));
            }
        }
        for (k, &s) in self.extraction.s_values.iter().enumerate() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::validation(format!(
                    "extraction.s_values[{k}]: must be >= 0, got {s}"
                )));
            }
        }
        if self.regime != RunRegime::Pulsed && self.s_values().is_empty() {
            return Err(Error::validation(
                "extraction.s_values: empty, and emitter.s is not set",
            ));
        }
        if let Some(i) = &self.interferometer {
            i.validate().map_err(|x| at("interferometer", x))?;
        }
        if let Some(d) = &self.detector {
            d.validate().map_err(|x| at("detector", x))?;
        }
        let m = &self.model;
        positive("model.half_span_s", m.half_span_s)?;
        positive("model.step_s", m.step_s)?;
        if m.step_s * 4.0 > m.half_span_s {
            return Err(Error::validation(
                "model.step_s: too coarse for model.half_span_s",
            ));
        }
        if let Some(t) = m.rep_period_s {
            positive("model.rep_period_s", t)?;
        }
        if self.regime == RunRegime::Pulsed
            && self.interferometer.is_some()
            && m.rep_period_s.is_none()
        {
            return Err(Error::validation(
                "model.rep_period_s: required for pulsed runs through an interferometer",
            ));
        }
        if self.regime == RunRegime::Cw && self.interferometer.is_some() && self.numeric() {
            return Err(Error::validation(
                "model.method: numeric curves are not available behind the interferometer",
            ));
        }
        if !(m.v.is_finite() && m.m.is_finite()) {
            return Err(Error::validation("model: v and m must be finite"));
        }
        if let Some(a) = &self.acquisition {
            if a.total_counts == 0 {
                return Err(Error::validation("acquisition.total_counts: must be > 0"));
            }
            positive("acquisition.bin_width_s", a.bin_width_s)?;
            if a.bin_width_s < m.step_s * (1.0 - 1e-9) {
                return Err(Error::validation(
                    "acquisition.bin_width_s: must be >= model.step_s",
                ));
            }
        }
        let x = &self.extraction;
        if let Some(w) = x.window_s {
            positive("extraction.window_s", w)?;
        }
        if let Some(w) = x.central_window_s {
            positive("extraction.central_window_s", w)?;
        }
        if !(x.edge_fraction > 0.0 && x.edge_fraction < 0.5) {
            return Err(Error::validation(
                "extraction.edge_fraction: must lie in (0, 0.5)",
            ));
        }
        if !x.fit_m && !x.fit_gamma {
            return Err(Error::validation(
                "extraction: fit_m and fit_gamma are both false",
            ));
        }
        for (name, r) in [
            ("sigma_gamma1", &x.sigma_gamma1),
            ("sigma_gamma_pd", &x.sigma_gamma_pd),
        ] {
            if let Some(r) = r {
                let v = r
                    .per_second()
                    .map_err(|e| at(&format!("extraction.{name}"), e))?;
                if !(v >= 0.0) {
                    return Err(Error::validation(format!(
                        "extraction.{name}: must be >= 0"
                    )));
                }
            }
        }
        if let Some(d) = x.delay_mismatch_s {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::validation(
                    "extraction.delay_mismatch_s: must be >= 0",
                ));
            }
        }
        if let Some(sb) = &x.sideband {
            sb.validate().map_err(|e| at("extraction.sideband", e))?;
        }
        Ok(())
    }

    pub fn gamma1(&self) -> f64 {
        self.emitter.gamma1.per_second().unwrap_or(f64::NAN)
    }

    pub fn gamma_pd(&self) -> f64 {
        self.emitter.gamma_pd.per_second().unwrap_or(f64::NAN)
    }

    /// Saturation parameters to run at.
    pub fn s_values(&self) -> Vec<f64> {
        if self.extraction.s_values.is_empty() {
            self.emitter.s.into_iter().collect()
        } else {
            self.extraction.s_values.clone()
        }
    }

    pub fn sigma_gamma1(&self) -> f64 {
        self.extraction
            .sigma_gamma1
            .map_or(0.0, |r| r.per_second().unwrap_or(0.0))
    }

    pub fn sigma_gamma_pd(&self) -> f64 {
        self.extraction
            .sigma_gamma_pd
            .map_or(0.0, |r| r.per_second().unwrap_or(0.0))
    }

    /// The master-equation model at saturation `s`.
    pub fn emitter_model(&self, s: f64) -> Result<EmitterModel> {
        let (g1, gpd) = (self.gamma1(), self.gamma_pd());
        match self.emitter.model {
            EmitterKind::TwoLevel => EmitterModel::two_level(&TwoLevelParams::new(g1, gpd, s)?),
            EmitterKind::ThreeLevel => {
                let beta = self
                    .emitter
                    .beta
                    .map_or(f64::NAN, |b| b.per_second().unwrap_or(f64::NAN));
                EmitterModel::three_level(&ThreeLevelParams::with_saturation(g1, gpd, beta, s)?)
            }
        }
    }

    /// Curves come from the master equation rather than closed forms.
    pub fn numeric(&self) -> bool {
        match self.model.method {
            Some(PulsedMethod::Numeric) => true,
            Some(PulsedMethod::Analytic) => false,
            None => self.emitter.model == EmitterKind::ThreeLevel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "emitter": {"gamma1": {"value": 40, "unit": "MHz_over_2pi"},
                    "gamma_pd": {"value": 15, "unit": "MHz_over_2pi"}, "s": 1.3},
        "regime": "cw"
    }"#;

    #[test]
    fn minimal_config_parses_with_units() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert!((c.gamma1() - 2.0 * std::f64::consts::PI * 40e6).abs() < 1e-3);
        assert_eq!(c.s_values(), vec![1.3]);
        assert_eq!(c.model.v, 1.0);
    }

    #[test]
    fn missing_field_names_its_path() {
        let text =
            r#"{"emitter": {"gamma_pd": {"value": 15, "unit": "MHz_over_2pi"}}, "regime": "cw"}"#;
        let err = RunConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("emitter.gamma1"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unit_is_mandatory() {
        let text = BASE.replace(
            r#""gamma1": {"value": 40, "unit": "MHz_over_2pi"}"#,
            r#""gamma1": {"value": 40}"#,
        );
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("emitter.gamma1"), "{err}");
    }

    #[test]
    fn semantic_errors_name_fields() {
        let text = BASE.replace(r#""regime": "cw""#, r#""regime": "cw", "acquisition": {"total_counts": 0, "bin_width_s": 1e-10, "seed": 1}"#);
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(
            err.to_string().contains("acquisition.total_counts"),
            "{err}"
        );
        let text = BASE.replace(
            r#""s": 1.3"#,
            r#""s": 1.3, "beta": {"value": 1, "unit": "per_second"}"#,
        );
        assert!(RunConfig::from_json(&text)
            .unwrap_err()
            .to_string()
            .contains("emitter.beta"));
        let text = BASE.replace(r#", "s": 1.3"#, "");
        assert!(RunConfig::from_json(&text)
            .unwrap_err()
            .to_string()
            .contains("s_values"));
        let text = BASE.replace(r#""regime": "cw""#, r#""regime": "cw", "colour": 1"#);
        assert!(RunConfig::from_json(&text)
            .unwrap_err()
            .to_string()
            .contains("colour"));
    }
}
