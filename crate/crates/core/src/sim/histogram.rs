use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::{grid_step, CorrelationCurve, Regime};
use crate::error::{Error, Result};
use crate::io;

/// Above this mean, Poisson draws use a continuity-corrected normal
/// approximation.
pub const NORMAL_APPROX_MEAN: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    AsymptoteNormalized,
}

/// Coincidence counts binned in delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
    total_counts: u64,
    normalization: Normalization,
    seed: Option<u64>,
    regime: Regime,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

impl CoincidenceHistogram {
    /// Histogram with uniform bins centred on `centers`.
    pub fn from_centers(centers: &[f64], counts: Vec<u64>, regime: Regime) -> Result<Self> {
        if centers.len() != counts.len() {
            return Err(Error::validation(format!(
                "{} bin centres but {} counts",
                centers.len(),
                counts.len()
            )));
        }
        let w = grid_step(centers)?;
        let mut bin_edges: Vec<f64> = centers.iter().map(|c| c - 0.5 * w).collect();
        bin_edges.push(centers[centers.len() - 1] + 0.5 * w);
        Ok(CoincidenceHistogram {
            bin_edges,
            total_counts: counts.iter().sum(),
            counts,
            normalization: Normalization::Raw,
            seed: None,
            regime,
            labels: BTreeMap::new(),
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn total_counts(&self) -> u64 {
        self.total_counts
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.labels
    }

    pub fn with_label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_edges[self.bin_edges.len() - 1] - self.bin_edges[0]) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Raw counts as a curve on the bin centres.
    pub fn to_curve(&self) -> Result<CorrelationCurve> {
        let mut c = CorrelationCurve::new(self.centers(), self.counts_f64(), self.regime)?;
        for (k, v) in &self.labels {
            c.set_label(k.clone(), v.clone());
        }
        Ok(c)
    }

    pub fn write_csv(&self, path: &Path, provenance: &[(String, String)]) -> Result<()> {
        let mut comments: Vec<(String, String)> = provenance.to_vec();
        comments.push(("regime".into(), self.regime.as_str().into()));
        comments.push(("bin_width_s".into(), format!("{:e}", self.bin_width())));
        comments.push(("total_counts".into(), self.total_counts.to_string()));
        if let Some(seed) = self.seed {
            if !provenance.iter().any(|(k, _)| k == "seed") {
                comments.push(("seed".into(), seed.to_string()));
            }
        }
        for (k, v) in &self.labels {
            comments.push((k.clone(), v.clone()));
        }
        let mut body = String::new();
        for (t, n) in self.centers().iter().zip(&self.counts) {
            let _ = writeln!(body, "{t:e},{n}");
        }
        io::write_table(path, &comments, "tau_s,counts", &body)
    }

    /// Reads a `tau_s,counts` CSV with bin centres in the first column.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = io::read_table(path, "tau_s,counts")?;
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: 0,
            msg,
        };
        let mut centers = Vec::with_capacity(table.rows.len());
        let mut counts = Vec::with_capacity(table.rows.len());
        for (k, (t, n)) in table.rows.iter().enumerate() {
            if *n < 0.0 || n.fract() != 0.0 {
                return Err(parse_err(format!(
                    "count in data row {} is not a nonnegative integer",
                    k + 1
                )));
            }
            centers.push(*t);
            counts.push(*n as u64);
        }
        let regime = match table.comments.get("regime") {
            Some(r) => {
                Regime::parse(r).ok_or_else(|| parse_err(format!("unknown regime '{r}'")))?
            }
            None => Regime::CwNormalized,
        };
        let mut h = CoincidenceHistogram::from_centers(&centers, counts, regime)
            .map_err(|e| parse_err(e.to_string()))?;
        h.seed = table.comments.get("seed").and_then(|s| s.parse().ok());
        for (k, v) in table.comments {
            if !matches!(k.as_str(), "regime" | "bin_width_s" | "total_counts") {
                h.labels.insert(k, v);
            }
        }
        Ok(h)
    }
}

/// Exact integral of the linear interpolant of `curve` over `[lo, hi]`.
fn integrate_interpolant(curve: &CorrelationCurve, lo: f64, hi: f64) -> f64 {
    let tau = curve.tau();
    let v = curve.values();
    let h = curve.step();
    let idx = |t: f64| (((t - tau[0]) / h).floor().max(0.0) as usize).min(tau.len() - 2);
    let at = |t: f64| curve.value_at(t).unwrap_or(0.0);
    let (k0, k1) = (idx(lo), idx(hi));
    if k0 == k1 {
        return 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    let mut total = 0.5 * (at(lo) + v[k0 + 1]) * (tau[k0 + 1] - lo);
    for k in k0 + 1..k1 {
        total += 0.5 * (v[k] + v[k + 1]) * h;
    }
    total + 0.5 * (v[k1] + at(hi)) * (hi - tau[k1])
}

/// One Poisson draw with the given mean.
pub fn poisson_draw<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > NORMAL_APPROX_MEAN {
        let z: f64 = StandardNormal.sample(rng);
        return (mean + mean.sqrt() * z + 0.5).floor().max(0.0) as u64;
    }
    Poisson::new(mean)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Poisson-noise histogram of `model`, binned at `bin_width` with a bin
/// centred on τ = 0 and scaled so that the expected total is `total_counts`.
/// Each bin draws from its own ChaCha stream, so results depend only on
/// `(seed, bin index)`.
pub fn synth_histogram(
    model: &CorrelationCurve,
    total_counts: u64,
    bin_width: f64,
    seed: u64,
) -> Result<CoincidenceHistogram> {
    let means = expected_counts(model, total_counts as f64, bin_width)?;
    let counts: Vec<u64> = means
        .1
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            poisson_draw(&mut rng, m)
        })
        .collect();
    let mut h = CoincidenceHistogram::from_centers(&means.0, counts, model.regime())?;
    h.seed = Some(seed);
    for (k, v) in model.labels() {
        h.labels.insert(k.clone(), v.clone());
    }
    Ok(h)
}

/// Bin centres and expected counts per bin for [`synth_histogram`].
pub fn expected_counts(
    model: &CorrelationCurve,
    total: f64,
    bin_width: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = model.step();
    if !(bin_width >= h * (1.0 - 1e-9)) {
        return Err(Error::argument(format!(
            "bin width {bin_width:e} is finer than the model grid spacing {h:e}"
        )));
    }
    if let Some(k) = model.values().iter().position(|&v| v < 0.0) {
        return Err(Error::argument(format!(
            "model is negative at index {k} ({:e})",
            model.values()[k]
        )));
    }
    let lo = model.tau()[0];
    let hi = model.tau()[model.len() - 1];
    let k_min = ((lo + 0.5 * bin_width) / bin_width - 1e-9).ceil() as i64;
    let k_max = ((hi - 0.5 * bin_width) / bin_width + 1e-9).floor() as i64;
    if k_max < k_min {
        return Err(Error::argument("bin width exceeds the model span"));
    }
    let centers: Vec<f64> = (k_min..=k_max).map(|k| k as f64 * bin_width).collect();
    let weights: Vec<f64> = centers
        .iter()
        .map(|&c| {
            let a = (c - 0.5 * bin_width).max(lo);
            let b = (c + 0.5 * bin_width).min(hi);
            integrate_interpolant(model, a, b)
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::argument(
            "model has zero weight over the histogram span",
        ));
    }
    Ok((centers, weights.iter().map(|w| total * w / sum).collect()))
}

/// Default fraction of bins at each end used to estimate the asymptote.
pub const ASYMPTOTE_EDGE_FRACTION: f64 = 0.1;

/// Mean counts in the outer `edge_fraction` of bins on each side.
pub fn asymptote_level(hist: &CoincidenceHistogram, edge_fraction: f64) -> Result<(f64, usize)> {
    let n = hist.len();
    let k = ((n as f64 * edge_fraction).floor() as usize).max(1);
    if 2 * k > n {
        return Err(Error::argument(
            "histogram too short to estimate its asymptote",
        ));
    }
    let c = hist.counts();
    let sum: u64 = c[..k].iter().chain(&c[n - k..]).sum();
    let level = sum as f64 / (2 * k) as f64;
    if !(level > 0.0) {
        return Err(Error::Extraction("histogram asymptote is zero".into()));
    }
    Ok((level, 2 * k))
}

/// Counts divided by the asymptotic level, as a normalized cw curve.
pub fn normalize_to_asymptote(
    hist: &CoincidenceHistogram,
    edge_fraction: f64,
) -> Result<CorrelationCurve> {
    let (level, _) = asymptote_level(hist, edge_fraction)?;
    let values = hist.counts().iter().map(|&c| c as f64 / level).collect();
    let mut c = CorrelationCurve::new(hist.centers(), values, Regime::CwNormalized)?;
    for (k, v) in hist.labels() {
        c.set_label(k.clone(), v.clone());
    }
    c.set_label("normalization", "asymptote_normalized");
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::symmetric_grid;

    fn flat(n_bins: usize, w: f64) -> CorrelationCurve {
        let half = 0.5 * n_bins as f64 * w;
        CorrelationCurve::from_fn(&symmetric_grid(half, w / 4.0), Regime::CwNormalized, |_| {
            1.0
        })
        .unwrap()
    }

    #[test]
    fn flat_model_poisson_statistics() {
        let h = synth_histogram(&flat(1000, 1e-10), 1_000_000, 1e-10, 11).unwrap();
        let n = h.len() as f64;
        let c = h.counts_f64();
        let mean = c.iter().sum::<f64>() / n;
        let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1e6 / n).abs() < 5.0);
        assert!((var / (1e6 / n) - 1.0).abs() < 0.1, "var {var}");
        assert_eq!(h.total_counts(), h.counts().iter().sum::<u64>());
    }

    #[test]
    fn deterministic_per_seed() {
        let m = flat(200, 1e-10);
        let a = synth_histogram(&m, 50_000, 1e-10, 3).unwrap();
        let b = synth_histogram(&m, 50_000, 1e-10, 3).unwrap();
        let c = synth_histogram(&m, 50_000, 1e-10, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts(), c.counts());
    }

    #[test]
    fn bins_are_centred_on_zero() {
        let h = synth_histogram(&flat(20, 1e-10), 1000, 1e-10, 1).unwrap();
        let centers = h.centers();
        assert!(centers.iter().any(|c| c.abs() < 1e-20));
        assert!((h.bin_width() - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn expected_counts_integrate_the_model() {
        let tau = symmetric_grid(5e-9, 1e-11);
        let m = CorrelationCurve::from_fn(&tau, Regime::PulsedUnnormalized, |t| {
            (-(t / 1e-9).abs()).exp()
        })
        .unwrap();
        let (c, mu) = expected_counts(&m, 1.0, 1e-10).unwrap();
        let peak = mu[c.len() / 2];
        // ∫ over the central bin relative to the whole curve.
        let want = (2.0 * (1.0 - (-0.05f64).exp())) / (2.0 * (1.0 - (-4.95f64).exp()));
        assert!((peak - want).abs() < 1e-5, "{peak} vs {want}");
    }

    #[test]
    fn rejects_negative_models_and_fine_bins() {
        let tau = symmetric_grid(1e-9, 1e-11);
        let m = CorrelationCurve::from_fn(&tau, Regime::CwNormalized, |t| t).unwrap();
        assert!(synth_histogram(&m, 10, 1e-10, 0).is_err());
        let m = CorrelationCurve::from_fn(&tau, Regime::CwNormalized, |_| 1.0).unwrap();
        assert!(synth_histogram(&m, 10, 1e-12, 0).is_err());
    }

    #[test]
    fn large_means_use_normal_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..4000)
            .map(|_| poisson_draw(&mut rng, 1e5) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / 4000.0;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3999.0;
        assert!((mean - 1e5).abs() < 20.0);
        assert!((var / 1e5 - 1.0).abs() < 0.1);
    }

    #[test]
    fn csv_round_trip_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let h = synth_histogram(&flat(100, 1e-10), 100_000, 1e-10, 9)
            .unwrap()
            .with_label("polarization", "parallel");
        h.write_csv(&p, &[]).unwrap();
        let back = CoincidenceHistogram::read_csv(&p).unwrap();
        assert_eq!(back.counts(), h.counts());
        assert_eq!(back.seed(), Some(9));
        assert_eq!(back.labels()["polarization"], "parallel");
        let g = normalize_to_asymptote(&back, ASYMPTOTE_EDGE_FRACTION).unwrap();
        let mean = g.values().iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::curve::symmetric_grid;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn same_seed_same_counts(seed in any::<u64>(), total in 1_000u64..10_000_000) {
            let model = CorrelationCurve::from_fn(
                &symmetric_grid(10e-9, 0.025e-9),
                Regime::CwNormalized,
                |t| 1.0 - 0.5 * (-(t.abs()) / 2e-9).exp(),
            )
            .unwrap();
            let a = synth_histogram(&model, total, 0.1e-9, seed).unwrap();
            let b = synth_histogram(&model, total, 0.1e-9, seed).unwrap();
            prop_assert_eq!(a.counts(), b.counts());
            prop_assert_eq!(a.seed, Some(seed));
        }
    }
}
