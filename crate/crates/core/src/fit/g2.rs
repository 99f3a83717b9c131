use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    convolve_values, cw_g2_value, interferometer_g2_cw_value, interferometer_g2_pulsed_value,
    irf_kernel, DetectorIrf, InterferometerParams, Polarization, PulsedComb, DEFAULT_SIDE_PEAKS,
};
use crate::curve::{grid_step, CorrelationCurve, Regime};
use crate::error::{Error, Result};
use crate::sim::CoincidenceHistogram;

use super::lm::{solve, FitResult, LmOptions, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Single-input antibunching dip 1 − V·e^(−Γ₁(1+S)|τ|).
    HbtEq9,
    /// Two-port cw HOM dip with visibility V and overlap M.
    CwEq7,
    /// cw HOM behind the unbalanced interferometer (central + side dips).
    InterferometerCw,
    /// Pulsed HOM behind the interferometer (peak comb minus dips).
    InterferometerPulsed,
}

impl ModelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::HbtEq9 => "hbt_eq9",
            ModelFamily::CwEq7 => "cw_eq7",
            ModelFamily::InterferometerCw => "interferometer_cw",
            ModelFamily::InterferometerPulsed => "interferometer_pulsed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ModelFamily::HbtEq9,
            ModelFamily::CwEq7,
            ModelFamily::InterferometerCw,
            ModelFamily::InterferometerPulsed,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
    }

    /// Parameter names in the order used by [`FitResult`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelFamily::HbtEq9 => &["amplitude", "gamma1", "s", "v", "tau0", "background"],
            ModelFamily::CwEq7 => &[
                "amplitude",
                "gamma1",
                "gamma_pd",
                "s",
                "v",
                "m",
                "tau0",
                "background",
            ],
            ModelFamily::InterferometerCw => &[
                "amplitude",
                "gamma1",
                "gamma_pd",
                "s",
                "v",
                "m",
                "r0sq",
                "r1sq",
                "delay",
                "tau0",
                "background",
            ],
            ModelFamily::InterferometerPulsed => &[
                "amplitude",
                "gamma1",
                "gamma_pd",
                "v",
                "m",
                "r0sq",
                "r1sq",
                "delay",
                "rep_period",
                "mismatch",
                "tau0",
                "background",
            ],
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            ModelFamily::InterferometerPulsed => Regime::PulsedUnnormalized,
            _ => Regime::CwNormalized,
        }
    }

    fn has_analytic_jacobian(&self) -> bool {
        matches!(self, ModelFamily::HbtEq9 | ModelFamily::CwEq7)
    }
}

fn default_value(name: &str) -> Option<f64> {
    match name {
        "tau0" | "background" | "mismatch" => Some(0.0),
        _ => None,
    }
}

fn default_bounds(name: &str) -> (f64, f64) {
    match name {
        "amplitude" | "gamma1" | "gamma_pd" | "s" | "delay" | "rep_period" | "mismatch" => {
            (0.0, f64::INFINITY)
        }
        "v" => (0.0, 2.0),
        "m" => (-1.0, 2.0),
        "r0sq" | "r1sq" => (0.0, 1.0),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

fn default_oversample() -> usize {
    4
}

fn default_side_peaks() -> usize {
    DEFAULT_SIDE_PEAKS
}

/// What to fit: a model family, the detector response, and which
/// parameters are fixed or free (with initial values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2FitSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub irf: Option<DetectorIrf>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    /// Free parameters and their initial values. `amplitude` is free with a
    /// data-derived start unless listed in either map.
    #[serde(default)]
    pub free: BTreeMap<String, f64>,
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    /// Model sub-samples per histogram bin.
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_side_peaks")]
    pub n_side_peaks: usize,
}

impl G2FitSpec {
    pub fn new(family: ModelFamily) -> Self {
        G2FitSpec {
            family,
            irf: None,
            fixed: BTreeMap::new(),
            free: BTreeMap::new(),
            bounds: BTreeMap::new(),
            oversample: default_oversample(),
            n_side_peaks: default_side_peaks(),
        }
    }

    pub fn fix(mut self, name: &str, v: f64) -> Self {
        self.fixed.insert(name.into(), v);
        self
    }

    pub fn free(mut self, name: &str, p0: f64) -> Self {
        self.free.insert(name.into(), p0);
        self
    }

    pub fn with_irf(mut self, irf: DetectorIrf) -> Self {
        self.irf = Some(irf);
        self
    }
}

/// Values for every family parameter.
#[derive(Debug, Clone, Copy, Default)]
struct Shape {
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    v: f64,
    m: f64,
    r0sq: f64,
    r1sq: f64,
    delay: f64,
    rep_period: f64,
    mismatch: f64,
    tau0: f64,
    amplitude: f64,
    background: f64,
}

impl Shape {
    fn from_full(family: ModelFamily, full: &[f64]) -> Self {
        let mut q = Shape::default();
        for (name, &v) in family.param_names().iter().zip(full) {
            match *name {
                "amplitude" => q.amplitude = v,
                "gamma1" => q.gamma1 = v,
                "gamma_pd" => q.gamma_pd = v,
                "s" => q.s = v,
                "v" => q.v = v,
                "m" => q.m = v,
                "r0sq" => q.r0sq = v,
                "r1sq" => q.r1sq = v,
                "delay" => q.delay = v,
                "rep_period" => q.rep_period = v,
                "mismatch" => q.mismatch = v,
                "tau0" => q.tau0 = v,
                "background" => q.background = v,
                _ => unreachable!(),
            }
        }
        q
    }

    fn ifp(&self) -> InterferometerParams {
        InterferometerParams {
            r0sq: self.r0sq,
            t0sq: 1.0 - self.r0sq,
            r1sq: self.r1sq,
            t1sq: 1.0 - self.r1sq,
            delay: self.delay,
            visibility: self.v,
            m_parallel: self.m,
            m_perpendicular: 0.0,
            mismatch: self.mismatch,
        }
    }
}

/// Unit-amplitude, background-free model shape at delay `t`.
fn shape_value(
    family: ModelFamily,
    q: &Shape,
    ifp: &InterferometerParams,
    n_side: usize,
    t: f64,
) -> f64 {
    let x = t - q.tau0;
    match family {
        ModelFamily::HbtEq9 => 1.0 - q.v * (-q.gamma1 * (1.0 + q.s) * x.abs()).exp(),
        ModelFamily::CwEq7 => cw_g2_value(x, q.gamma1, q.gamma_pd, q.s, q.v, q.m),
        ModelFamily::InterferometerCw => {
            interferometer_g2_cw_value(x, q.gamma1, q.gamma_pd, q.s, ifp, Polarization::Parallel)
        }
        ModelFamily::InterferometerPulsed => interferometer_g2_pulsed_value(
            x,
            q.gamma1,
            q.gamma_pd,
            ifp,
            PulsedComb {
                rep_period: q.rep_period,
                n_side_peaks: n_side,
            },
            Polarization::Parallel,
        ),
    }
}

/// ∂shape/∂(gamma1, gamma_pd, s, v, m) for the two closed-form families.
fn shape_grad(family: ModelFamily, q: &Shape, t: f64) -> [f64; 5] {
    let x = (t - q.tau0).abs();
    let a = q.gamma1 * (1.0 + q.s);
    let e1 = (-a * x).exp();
    match family {
        ModelFamily::HbtEq9 => {
            let da = q.v * x * e1;
            [da * (1.0 + q.s), 0.0, da * q.gamma1, -e1, 0.0]
        }
        _ => {
            let e2 = (-(a + 2.0 * q.gamma_pd) * x).exp();
            let da = 0.5 * q.v * x * (e1 + q.m * e2);
            [
                da * (1.0 + q.s),
                q.v * q.m * x * e2,
                da * q.gamma1,
                -0.5 * (e1 + q.m * e2),
                -0.5 * q.v * e2,
            ]
        }
    }
}

const GRAD_NAMES: [&str; 5] = ["gamma1", "gamma_pd", "s", "v", "m"];

/// Forward model mapping free parameters to expected counts per bin:
/// the shape is sampled `oversample` times per bin, convolved with the
/// IRF, bin-averaged, scaled by `amplitude` and offset by `background`.
pub struct G2Model {
    family: ModelFamily,
    n_side: usize,
    n_bins: usize,
    oversample: usize,
    pad: usize,
    fine: Vec<f64>,
    kernel: Vec<f64>,
    names: Vec<String>,
    full0: Vec<f64>,
    free_idx: Vec<usize>,
    fixed: Vec<(String, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl G2Model {
    /// Resolves the spec against a histogram with the given bin centres.
    pub fn new(spec: &G2FitSpec, centers: &[f64], data: &[f64]) -> Result<Self> {
        let names = spec.family.param_names();
        for k in spec.free.keys() {
            if spec.fixed.contains_key(k) {
                return Err(Error::argument(format!(
                    "parameter '{k}' is listed as both free and fixed"
                )));
            }
        }
        for k in spec
            .free
            .keys()
            .chain(spec.fixed.keys())
            .chain(spec.bounds.keys())
        {
            if !names.contains(&k.as_str()) {
                return Err(Error::argument(format!(
                    "'{k}' is not a parameter of {} (expected one of {})",
                    spec.family.as_str(),
                    names.join(", ")
                )));
            }
        }
        if spec.oversample == 0 {
            return Err(Error::argument("oversample must be >= 1"));
        }
        let bw = grid_step(centers)?;
        let mut full0 = Vec::with_capacity(names.len());
        let mut free_idx = Vec::new();
        let mut fixed = Vec::new();
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        for (k, name) in names.iter().enumerate() {
            let (lo, hi) = spec
                .bounds
                .get(*name)
                .map(|b| (b[0], b[1]))
                .unwrap_or_else(|| default_bounds(name));
            if let Some(&v) = spec.fixed.get(*name) {
                full0.push(v);
                fixed.push((name.to_string(), v));
            } else if let Some(&v) = spec.free.get(*name) {
                full0.push(v);
                free_idx.push(k);
                lower.push(lo);
                upper.push(hi);
            } else if *name == "amplitude" {
                full0.push(amplitude_guess(spec.family, data));
                free_idx.push(k);
                lower.push(lo);
                upper.push(hi);
            } else if let Some(v) = default_value(name) {
                full0.push(v);
                fixed.push((name.to_string(), v));
            } else {
                return Err(Error::argument(format!(
                    "parameter '{name}' of {} must be fixed or free",
                    spec.family.as_str()
                )));
            }
        }
        let h = bw / spec.oversample as f64;
        let kernel = match &spec.irf {
            Some(irf) => irf_kernel(irf, h)?,
            None => vec![1.0],
        };
        let pad = kernel.len() / 2;
        let n_fine = centers.len() * spec.oversample + 2 * pad;
        let start = centers[0] - 0.5 * bw + 0.5 * h - pad as f64 * h;
        let fine = (0..n_fine).map(|i| start + i as f64 * h).collect();
        Ok(G2Model {
            family: spec.family,
            n_side: spec.n_side_peaks,
            n_bins: centers.len(),
            oversample: spec.oversample,
            pad,
            fine,
            kernel,
            names: free_idx.iter().map(|&k| names[k].to_string()).collect(),
            full0,
            free_idx,
            fixed,
            lower,
            upper,
        })
    }

    pub fn free_names(&self) -> &[String] {
        &self.names
    }

    pub fn initial(&self) -> Vec<f64> {
        self.free_idx.iter().map(|&k| self.full0[k]).collect()
    }

    fn full(&self, free: &[f64]) -> Vec<f64> {
        let mut full = self.full0.clone();
        for (&k, &v) in self.free_idx.iter().zip(free) {
            full[k] = v;
        }
        full
    }

    fn bin_average(&self, fine: &[f64]) -> Vec<f64> {
        let conv = convolve_values(fine, &self.kernel);
        (0..self.n_bins)
            .map(|k| {
                let a = self.pad + k * self.oversample;
                conv[a..a + self.oversample].iter().sum::<f64>() / self.oversample as f64
            })
            .collect()
    }

    fn unit_shape(&self, q: &Shape) -> Vec<f64> {
        let ifp = q.ifp();
        let fine: Vec<f64> = self
            .fine
            .iter()
            .map(|&t| shape_value(self.family, q, &ifp, self.n_side, t))
            .collect();
        self.bin_average(&fine)
    }

    /// Expected counts per bin.
    pub fn predict(&self, free: &[f64]) -> Result<Vec<f64>> {
        let q = Shape::from_full(self.family, &self.full(free));
        Ok(self
            .unit_shape(&q)
            .into_iter()
            .map(|v| q.amplitude * v + q.background)
            .collect())
    }

    /// Closed-form Jacobian, when the family has one and `tau0` is fixed.
    pub fn analytic_jacobian(&self, free: &[f64]) -> Option<DMatrix<f64>> {
        if !self.family.has_analytic_jacobian() || self.names.iter().any(|n| n == "tau0") {
            return None;
        }
        let q = Shape::from_full(self.family, &self.full(free));
        let mut jac = DMatrix::zeros(self.n_bins, self.names.len());
        for (col, name) in self.names.iter().enumerate() {
            let values = match name.as_str() {
                "amplitude" => self.unit_shape(&q),
                "background" => vec![1.0; self.n_bins],
                other => {
                    let g = GRAD_NAMES.iter().position(|n| *n == other)?;
                    let fine: Vec<f64> = self
                        .fine
                        .iter()
                        .map(|&t| shape_grad(self.family, &q, t)[g])
                        .collect();
                    self.bin_average(&fine)
                        .into_iter()
                        .map(|v| q.amplitude * v)
                        .collect()
                }
            };
            jac.set_column(col, &nalgebra::DVector::from_vec(values));
        }
        Some(jac)
    }

    fn problem<'a>(&self, y: &'a [f64], w: &'a [f64]) -> Problem<'a> {
        let p0 = self.initial();
        let names: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        let mut problem = Problem::new(&names, &p0, y, w).with_bounds(&self.lower, &self.upper);
        let h = (self.fine[1] - self.fine[0]) * self.oversample as f64;
        for (k, n) in self.names.iter().enumerate() {
            problem.scales[k] = match n.as_str() {
                "tau0" => h,
                "background" => p0[self
                    .names
                    .iter()
                    .position(|x| x == "amplitude")
                    .unwrap_or(k)]
                .abs()
                .max(1.0),
                "m" | "v" | "r0sq" | "r1sq" | "s" => p0[k].abs().max(0.1),
                _ => problem.scales[k],
            };
        }
        problem
    }

    fn run(&self, y: &[f64], w: &[f64]) -> Result<FitResult> {
        let problem = self.problem(y, w);
        let model = |p: &[f64]| self.predict(p);
        let jac = |p: &[f64]| -> Result<DMatrix<f64>> {
            self.analytic_jacobian(p)
                .ok_or_else(|| Error::numerical("no closed-form Jacobian"))
        };
        let use_analytic = self.analytic_jacobian(&self.initial()).is_some();
        let mut r = solve(
            &problem,
            &model,
            if use_analytic { Some(&jac) } else { None },
            LmOptions::default(),
        )?;
        r.fixed = self.fixed.clone();
        Ok(r)
    }
}

fn amplitude_guess(family: ModelFamily, data: &[f64]) -> f64 {
    let n = data.len();
    let k = (n / 10).max(1).min(n);
    let guess = match family {
        ModelFamily::InterferometerPulsed => data.iter().cloned().fold(0.0, f64::max) / 1.5,
        _ => (data[..k].iter().sum::<f64>() + data[n - k..].iter().sum::<f64>()) / (2 * k) as f64,
    };
    if guess > 0.0 {
        guess
    } else {
        1.0
    }
}

/// Poisson weights 1/max(counts, 1).
pub fn poisson_weights(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| 1.0 / v.max(1.0)).collect()
}

/// Fits per-bin counts (or expected counts) on uniform bin centres.
pub fn fit_g2_values(centers: &[f64], values: &[f64], spec: &G2FitSpec) -> Result<FitResult> {
    if centers.len() != values.len() {
        return Err(Error::argument("bin centres and values differ in length"));
    }
    let model = G2Model::new(spec, centers, values)?;
    model.run(values, &poisson_weights(values))
}

fn check_regime(hist: &CoincidenceHistogram, family: ModelFamily) -> Result<()> {
    if hist.regime() != family.regime() {
        return Err(Error::argument(format!(
            "{} expects {} data but the histogram is {}",
            family.as_str(),
            family.regime().as_str(),
            hist.regime().as_str()
        )));
    }
    Ok(())
}

/// Fits the chosen closed form, convolved with the IRF, to a histogram.
pub fn fit_g2_dataset(hist: &CoincidenceHistogram, spec: &G2FitSpec) -> Result<FitResult> {
    check_regime(hist, spec.family)?;
    fit_g2_values(&hist.centers(), &hist.counts_f64(), spec)
}

/// Near-symmetric second splitters make the two side dips hard to tell
/// apart; both labelings are tried inside this distance from 50:50.
const LABEL_SWAP_BAND: f64 = 0.05;

/// Two-stage protocol for the interferometer families: first the side dips
/// alone (central region masked) for the M-independent parameters, then
/// the full histogram for `m` and `gamma_pd` with those held fixed.
pub fn fit_g2_staged(hist: &CoincidenceHistogram, spec: &G2FitSpec) -> Result<FitResult> {
    check_regime(hist, spec.family)?;
    fit_g2_staged_values(&hist.centers(), &hist.counts_f64(), spec)
}

pub fn fit_g2_staged_values(
    centers: &[f64],
    values: &[f64],
    spec: &G2FitSpec,
) -> Result<FitResult> {
    if !matches!(
        spec.family,
        ModelFamily::InterferometerCw | ModelFamily::InterferometerPulsed
    ) {
        return Err(Error::argument(
            "the staged protocol applies to interferometer families only",
        ));
    }
    let central = ["m", "gamma_pd"];
    let get = |n: &str| spec.fixed.get(n).or_else(|| spec.free.get(n)).copied();
    let delay = get("delay").ok_or_else(|| Error::argument("'delay' must be fixed or free"))?;
    let mut half = 0.5 * delay;
    if let Some(rep) = get("rep_period") {
        half = half.min(0.5 * rep);
    }
    let tau0 = get("tau0").unwrap_or(0.0);

    let mut stage1 = spec.clone();
    for n in central {
        if let Some(v) = stage1.free.remove(n) {
            stage1.fixed.insert(n.into(), v);
        }
    }
    let w_full = poisson_weights(values);
    let w_side: Vec<f64> = centers
        .iter()
        .zip(&w_full)
        .map(|(c, w)| if (c - tau0).abs() < half { 0.0 } else { *w })
        .collect();

    let mut labelings = vec![stage1.clone()];
    let r1 = get("r1sq");
    if let Some(r1) = r1.filter(|r| (r - 0.5).abs() <= LABEL_SWAP_BAND && (r - 0.5).abs() > 0.0) {
        let mut swapped = stage1.clone();
        if swapped.fixed.contains_key("r1sq") {
            swapped.fixed.insert("r1sq".into(), 1.0 - r1);
        } else {
            swapped.free.insert("r1sq".into(), 1.0 - r1);
        }
        labelings.push(swapped);
    }
    let mut fits = Vec::new();
    for s in &labelings {
        let m = G2Model::new(s, centers, values)?;
        fits.push((m.run(values, &w_side)?, s.clone()));
    }
    fits.sort_by(|a, b| a.0.chi2.total_cmp(&b.0.chi2));
    let degenerate = fits.len() == 2
        && (fits[1].0.chi2 - fits[0].0.chi2).abs() <= 1e-6 * fits[1].0.chi2.max(f64::MIN_POSITIVE);
    let (side_fit, stage1_spec) = fits.swap_remove(0);

    let mut stage2 = G2FitSpec {
        free: BTreeMap::new(),
        fixed: BTreeMap::new(),
        ..stage1_spec.clone()
    };
    for (n, v) in side_fit.all_params() {
        stage2.fixed.insert(n, v);
    }
    for n in central {
        if let Some(&v) = spec.free.get(n) {
            stage2.fixed.remove(n);
            stage2.free.insert(n.into(), v);
        }
    }
    let mut result = if stage2.free.is_empty() {
        side_fit.clone()
    } else {
        let central_fit = G2Model::new(&stage2, centers, values)?.run(values, &w_full)?;
        merge_stages(&side_fit, &central_fit)
    };
    if degenerate {
        result
            .warnings
            .push("side-dip labeling degenerate: r1sq and 1 - r1sq fit equally well".into());
    }
    Ok(result)
}

/// Stage-1 and stage-2 estimates side by side; block-diagonal covariance.
fn merge_stages(side: &FitResult, central: &FitResult) -> FitResult {
    let mut names = side.names.clone();
    names.extend(central.names.iter().cloned());
    let mut params = side.params.clone();
    params.extend(&central.params);
    let mut sigmas = side.sigmas.clone();
    sigmas.extend(&central.sigmas);
    let (a, b) = (side.names.len(), central.names.len());
    let covariance = (0..a + b)
        .map(|i| {
            (0..a + b)
                .map(|j| match (i < a, j < a) {
                    (true, true) => side.covariance[i][j],
                    (false, false) => central.covariance[i - a][j - a],
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let mut warnings = side.warnings.clone();
    warnings.extend(central.warnings.iter().cloned());
    let fixed = central
        .fixed
        .iter()
        .filter(|(n, _)| !names.contains(n))
        .cloned()
        .collect();
    FitResult {
        names,
        params,
        sigmas,
        covariance,
        residual_norm: central.residual_norm,
        chi2: central.chi2,
        dof: central.dof,
        reduced_chi2: central.reduced_chi2,
        n_iter: side.n_iter + central.n_iter,
        converged: side.converged && central.converged,
        warnings,
        fixed,
    }
}

/// Deconvolved, unit-amplitude model shape at the fitted parameters.
pub fn fitted_shape(
    family: ModelFamily,
    fit: &FitResult,
    tau: &[f64],
    n_side_peaks: usize,
) -> Result<CorrelationCurve> {
    let all = fit.all_params();
    let full: Vec<f64> = family
        .param_names()
        .iter()
        .map(|n| {
            all.get(*n)
                .copied()
                .or_else(|| default_value(n))
                .ok_or_else(|| Error::argument(format!("fit result lacks parameter '{n}'")))
        })
        .collect::<Result<_>>()?;
    let mut q = Shape::from_full(family, &full);
    q.tau0 = 0.0;
    let ifp = q.ifp();
    CorrelationCurve::from_fn(tau, family.regime(), |t| {
        shape_value(family, &q, &ifp, n_side_peaks, t)
    })
    .map(|c| c.with_label("model", family.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{convolve_irf, cw_g2_analytic, hbt_g2_analytic};
    use crate::curve::symmetric_grid;
    use crate::sim::{expected_counts, synth_histogram};
    use crate::units::mhz_over_2pi;

    fn rates() -> (f64, f64) {
        (mhz_over_2pi(40.0), mhz_over_2pi(15.0))
    }

    fn noiseless(curve: &CorrelationCurve, total: f64, bw: f64) -> (Vec<f64>, Vec<f64>) {
        expected_counts(curve, total, bw).unwrap()
    }

    #[test]
    fn amplitude_only_fit_is_exact() {
        let (g1, gpd) = rates();
        let centers = symmetric_grid(15e-9, 0.1e-9);
        let spec = G2FitSpec::new(ModelFamily::CwEq7)
            .fix("gamma1", g1)
            .fix("gamma_pd", gpd)
            .fix("s", 1.3)
            .fix("v", 1.0)
            .fix("m", 0.96);
        let gen = G2Model::new(&spec, &centers, &vec![1.0; centers.len()]).unwrap();
        assert_eq!(gen.free_names(), vec!["amplitude".to_string()]);
        let y = gen.predict(&[3456.5]).unwrap();
        let r = fit_g2_values(&centers, &y, &spec).unwrap();
        assert!(r.converged);
        assert!((r.get("amplitude").unwrap() / 3456.5 - 1.0).abs() < 1e-12);
        assert!(
            r.residual_norm < 1e-9 * y.iter().sum::<f64>().sqrt(),
            "{}",
            r.residual_norm
        );
    }

    #[test]
    fn shape_parameters_round_trip() {
        let (g1, gpd) = rates();
        let tau = symmetric_grid(20e-9, 0.025e-9);
        let irf = DetectorIrf::Gaussian { sigma: 0.35e-9 };
        let c = convolve_irf(
            &cw_g2_analytic(&tau, g1, gpd, 1.3, 0.97, 0.9).unwrap(),
            &irf,
        )
        .unwrap();
        let (centers, y) = noiseless(&c, 1e6, 0.1e-9);
        let spec = G2FitSpec::new(ModelFamily::CwEq7)
            .with_irf(irf)
            .fix("gamma1", g1)
            .fix("s", 1.3)
            .free("gamma_pd", 0.7 * gpd)
            .free("v", 0.9)
            .free("m", 0.7);
        let r = fit_g2_values(&centers, &y, &spec).unwrap();
        assert!((r.get("gamma_pd").unwrap() / gpd - 1.0).abs() < 1e-4);
        assert!((r.get("m").unwrap() - 0.9).abs() < 1e-4);
        assert!((r.get("v").unwrap() - 0.97).abs() < 1e-4);
    }

    #[test]
    fn name_collisions_and_unknown_names() {
        let c = [0.0, 1.0, 2.0];
        let y = [1.0, 1.0, 1.0];
        let spec = G2FitSpec::new(ModelFamily::HbtEq9)
            .fix("v", 1.0)
            .free("v", 0.9);
        assert!(fit_g2_values(&c, &y, &spec).is_err());
        let spec = G2FitSpec::new(ModelFamily::HbtEq9).fix("bogus", 1.0);
        assert!(fit_g2_values(&c, &y, &spec).is_err());
        let spec = G2FitSpec::new(ModelFamily::HbtEq9).fix("v", 1.0);
        let err = fit_g2_values(&c, &y, &spec).unwrap_err();
        assert!(err.to_string().contains("gamma1"));
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let (g1, gpd) = rates();
        let centers = symmetric_grid(10e-9, 0.1e-9);
        let y = vec![100.0; centers.len()];
        let spec = G2FitSpec::new(ModelFamily::CwEq7)
            .with_irf(DetectorIrf::Gaussian { sigma: 0.3e-9 })
            .free("amplitude", 120.0)
            .free("gamma1", 1.1 * g1)
            .free("gamma_pd", 0.8 * gpd)
            .free("s", 1.7)
            .free("v", 0.93)
            .free("m", 0.8)
            .free("background", 2.0);
        let m = G2Model::new(&spec, &centers, &y).unwrap();
        let p = m.initial();
        let j = m.analytic_jacobian(&p).unwrap();
        let scales: Vec<f64> = p.iter().map(|v| v.abs().max(1.0)).collect();
        let fd =
            super::super::lm::finite_difference_jacobian(&|q: &[f64]| m.predict(q), &p, &scales)
                .unwrap();
        for c in 0..p.len() {
            let norm = j.column(c).amax();
            for r in 0..centers.len() {
                assert!(
                    (j[(r, c)] - fd[(r, c)]).abs() <= 1e-6 * norm,
                    "param {} row {r}: {} vs {}",
                    m.free_names()[c],
                    j[(r, c)],
                    fd[(r, c)]
                );
            }
        }
    }

    #[test]
    fn hbt_visibility_recovered_from_noisy_data() {
        let (g1, _) = rates();
        let s = 1.0;
        let tau = symmetric_grid(20e-9, 0.025e-9);
        let irf = DetectorIrf::Gaussian { sigma: 0.35e-9 };
        let c = convolve_irf(&hbt_g2_analytic(&tau, g1, s, 1.0).unwrap(), &irf).unwrap();
        let h = synth_histogram(&c, 500_000, 0.1e-9, 17).unwrap();
        // Raw dip depth without the detector response.
        let raw = G2FitSpec::new(ModelFamily::HbtEq9)
            .fix("gamma1", g1)
            .fix("s", s)
            .free("v", 0.8);
        let with_irf = raw.clone().with_irf(irf);
        let r_raw = fit_g2_dataset(&h, &raw).unwrap();
        let r = fit_g2_dataset(&h, &with_irf).unwrap();
        assert!(
            (r.get("v").unwrap() - 1.0).abs() < 0.03,
            "{}",
            r.get("v").unwrap()
        );
        assert!(r_raw.get("v").unwrap() < r.get("v").unwrap());
    }

    #[test]
    fn regime_mismatch_is_rejected() {
        let tau = symmetric_grid(5e-9, 0.05e-9);
        let c = CorrelationCurve::from_fn(&tau, Regime::PulsedUnnormalized, |_| 1.0).unwrap();
        let h = synth_histogram(&c, 1000, 0.1e-9, 1).unwrap();
        let spec = G2FitSpec::new(ModelFamily::CwEq7);
        assert!(fit_g2_dataset(&h, &spec).is_err());
    }
}
