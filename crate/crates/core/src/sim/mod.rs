//! Synthetic measurements and instrument formulas: Poisson coincidence
//! histograms, power broadening, saturation and spectral filtering.

mod histogram;
mod spectrum;

pub use histogram::{
    asymptote_level, expected_counts, normalize_to_asymptote, poisson_draw, synth_histogram,
    CoincidenceHistogram, Normalization, ASYMPTOTE_EDGE_FRACTION, NORMAL_APPROX_MEAN,
};
pub use spectrum::{
    coherent_fraction, CoherentFraction, FilterModel, Line, PoissonSideband, SpectrumModel,
};

/// Power-broadened FWHM linewidth Δν = (Γ₂/π)√(1+S), Hz, for Γ₂ in rad/s.
pub fn power_broadened_linewidth(gamma2: f64, s: f64) -> f64 {
    gamma2 / std::f64::consts::PI * (1.0 + s).sqrt()
}

/// Detected rate R∞·S/(1+S).
pub fn saturation_rate(r_inf: f64, s: f64) -> f64 {
    r_inf * s / (1.0 + s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz_over_2pi;

    #[test]
    fn linewidth() {
        let g2 = mhz_over_2pi(35.0);
        assert!((power_broadened_linewidth(g2, 0.0) - 70e6).abs() < 1e-6);
        assert!(
            (power_broadened_linewidth(g2, 3.0) - 2.0 * power_broadened_linewidth(g2, 0.0)).abs()
                < 1e-6
        );
    }

    #[test]
    fn saturation() {
        assert_eq!(saturation_rate(2e6, 1.0), 1e6);
        assert!((saturation_rate(2e6, 1e12) - 2e6).abs() < 1e-3);
        assert_eq!(saturation_rate(2e6, 0.0), 0.0);
    }
}
