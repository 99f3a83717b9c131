//! Emitter Liouvillians: the incoherently pumped effective two-level system
//! and the coherently driven three-level system it is derived from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{ket_bra, CMatrix, Dissipator, LiouvillianSpec};
use num_complex::Complex64;

/// Two-level basis index of |e⟩.
pub const TWO_LEVEL_EXCITED: usize = 0;
/// Two-level basis index of |g⟩.
pub const TWO_LEVEL_GROUND: usize = 1;
/// Three-level basis order is |v⟩, |e⟩, |g⟩.
pub const THREE_LEVEL_PUMP: usize = 0;
pub const THREE_LEVEL_EXCITED: usize = 1;
pub const THREE_LEVEL_GROUND: usize = 2;

/// Effective incoherently driven two-level emitter. Rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelParams {
    /// Spontaneous decay rate Γ₁.
    pub gamma1: f64,
    /// Excess pure dephasing γ.
    pub gamma_pd: f64,
    /// Saturation parameter S.
    pub s: f64,
}

impl TwoLevelParams {
    pub fn new(gamma1: f64, gamma_pd: f64, s: f64) -> Result<Self> {
        let p = TwoLevelParams {
            gamma1,
            gamma_pd,
            s,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_rates(self.gamma1, self.gamma_pd)?;
        if !(self.s >= 0.0) || !self.s.is_finite() {
            return Err(Error::validation(format!(
                "saturation parameter must be >= 0, got {}",
                self.s
            )));
        }
        Ok(())
    }

    /// Total dephasing rate Γ₂ = Γ₁/2 + γ.
    pub fn gamma2(&self) -> f64 {
        self.gamma1 / 2.0 + self.gamma_pd
    }
}

fn validate_rates(gamma1: f64, gamma_pd: f64) -> Result<()> {
    if !(gamma1 > 0.0) || !gamma1.is_finite() {
        return Err(Error::validation(format!(
            "gamma1 must be > 0, got {gamma1}"
        )));
    }
    if !(gamma_pd >= 0.0) || !gamma_pd.is_finite() {
        return Err(Error::validation(format!(
            "gamma_pd must be >= 0, got {gamma_pd}"
        )));
    }
    Ok(())
}

/// How strongly the three-level system is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// Rabi frequency Ω between |g⟩ and |v⟩, rad/s.
    Rabi(f64),
    /// Saturation parameter S = Ω²/(βΓ₁).
    Saturation(f64),
}

/// Coherently driven three-level emitter with a fast-decaying pump level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    pub gamma1: f64,
    pub gamma_pd: f64,
    /// Pump-level decay rate β, 1/s.
    pub beta: f64,
    pub drive: Drive,
}

impl ThreeLevelParams {
    pub fn with_saturation(gamma1: f64, gamma_pd: f64, beta: f64, s: f64) -> Result<Self> {
        let p = ThreeLevelParams {
            gamma1,
            gamma_pd,
            beta,
            drive: Drive::Saturation(s),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_rabi(gamma1: f64, gamma_pd: f64, beta: f64, rabi: f64) -> Result<Self> {
        let p = ThreeLevelParams {
            gamma1,
            gamma_pd,
            beta,
            drive: Drive::Rabi(rabi),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_rates(self.gamma1, self.gamma_pd)?;
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::validation(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        let x = match self.drive {
            Drive::Rabi(x) | Drive::Saturation(x) => x,
        };
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::validation(format!("drive must be >= 0, got {x}")));
        }
        Ok(())
    }

    pub fn rabi(&self) -> f64 {
        match self.drive {
            Drive::Rabi(o) => o,
            Drive::Saturation(s) => (s * self.beta * self.gamma1).sqrt(),
        }
    }

    pub fn s(&self) -> f64 {
        match self.drive {
            Drive::Rabi(o) => o * o / (self.beta * self.gamma1),
            Drive::Saturation(s) => s,
        }
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma1 / 2.0 + self.gamma_pd
    }

    /// Exact steady excited population S/(1 + S(1 + 2Γ₁/β)).
    pub fn exact_excited_population(&self) -> f64 {
        let s = self.s();
        s / (1.0 + s * (1.0 + 2.0 * self.gamma1 / self.beta))
    }

    /// The effective two-level system obtained by eliminating |v⟩.
    pub fn effective_two_level(&self) -> TwoLevelParams {
        TwoLevelParams {
            gamma1: self.gamma1,
            gamma_pd: self.gamma_pd,
            s: self.s(),
        }
    }
}

fn r(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Dissipators (σ, Γ₁), (σ†, SΓ₁), (σ†σ, 2γ) with zero Hamiltonian.
pub fn two_level_liouvillian(p: &TwoLevelParams) -> Result<LiouvillianSpec> {
    p.validate()?;
    let sigma = two_level_dipole();
    let sigma_dag = sigma.adjoint();
    let n_e = &sigma_dag * &sigma;
    LiouvillianSpec::new(
        CMatrix::zeros(2, 2),
        vec![
            Dissipator {
                operator: sigma,
                rate: p.gamma1,
            },
            Dissipator {
                operator: sigma_dag,
                rate: p.s * p.gamma1,
            },
            Dissipator {
                operator: n_e,
                rate: 2.0 * p.gamma_pd,
            },
        ],
    )
}

/// H = (Ω/2)(σ_vg + σ_vg†) with dissipators (σ, Γ₁), (σ_ev, β), (σ†σ, 2γ).
pub fn three_level_liouvillian(p: &ThreeLevelParams) -> Result<LiouvillianSpec> {
    p.validate()?;
    let sigma = three_level_dipole();
    let sigma_vg = ket_bra(3, THREE_LEVEL_PUMP, THREE_LEVEL_GROUND);
    let sigma_ev = ket_bra(3, THREE_LEVEL_EXCITED, THREE_LEVEL_PUMP);
    let h = (&sigma_vg + sigma_vg.adjoint()) * r(p.rabi() / 2.0);
    let n_e = sigma.adjoint() * &sigma;
    LiouvillianSpec::new(
        h,
        vec![
            Dissipator {
                operator: sigma,
                rate: p.gamma1,
            },
            Dissipator {
                operator: sigma_ev,
                rate: p.beta,
            },
            Dissipator {
                operator: n_e,
                rate: 2.0 * p.gamma_pd,
            },
        ],
    )
}

/// σ = |g⟩⟨e| in the two-level basis.
pub fn two_level_dipole() -> CMatrix {
    ket_bra(2, TWO_LEVEL_GROUND, TWO_LEVEL_EXCITED)
}

/// σ = |g⟩⟨e| in the three-level basis.
pub fn three_level_dipole() -> CMatrix {
    ket_bra(3, THREE_LEVEL_GROUND, THREE_LEVEL_EXCITED)
}

/// A Liouvillian bundled with the dipole operator of its emitting transition.
#[derive(Debug, Clone)]
pub struct EmitterModel {
    pub liouvillian: LiouvillianSpec,
    pub dipole: CMatrix,
}

impl EmitterModel {
    pub fn two_level(p: &TwoLevelParams) -> Result<Self> {
        Ok(EmitterModel {
            liouvillian: two_level_liouvillian(p)?,
            dipole: two_level_dipole(),
        })
    }

    pub fn three_level(p: &ThreeLevelParams) -> Result<Self> {
        Ok(EmitterModel {
            liouvillian: three_level_liouvillian(p)?,
            dipole: three_level_dipole(),
        })
    }

    /// Two-level emitter starting in |e⟩ with no pumping, for pulsed excitation.
    pub fn pulsed(gamma1: f64, gamma_pd: f64) -> Result<Self> {
        Self::two_level(&TwoLevelParams::new(gamma1, gamma_pd, 0.0)?)
    }

    pub fn excited_index(&self) -> usize {
        match self.liouvillian.dim() {
            3 => THREE_LEVEL_EXCITED,
            _ => TWO_LEVEL_EXCITED,
        }
    }
}

/// The quantity from which a saturation parameter is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationInput {
    Omega(f64),
    S(f64),
    /// Excitation power over saturation power, P/P_sat.
    PowerRatio(f64),
}

/// β and Γ₁, needed to convert between Ω and S.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveContext {
    pub beta: f64,
    pub gamma1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationValues {
    pub s: f64,
    /// Rabi frequency, when a [`DriveContext`] was available.
    pub omega: Option<f64>,
}

/// Converts between Ω, S and P/P_sat using S = Ω²/(βΓ₁) = P/P_sat.
pub fn saturation_convert(
    known: SaturationInput,
    ctx: Option<DriveContext>,
) -> Result<SaturationValues> {
    let x = match known {
        SaturationInput::Omega(x) | SaturationInput::S(x) | SaturationInput::PowerRatio(x) => x,
    };
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::argument(format!(
            "saturation input must be finite and >= 0, got {x}"
        )));
    }
    if let Some(c) = ctx {
        if !(c.beta > 0.0 && c.gamma1 > 0.0) {
            return Err(Error::argument("beta and gamma1 must be > 0"));
        }
    }
    match known {
        SaturationInput::Omega(omega) => {
            let c = ctx.ok_or_else(|| {
                Error::argument("converting a Rabi frequency needs beta and gamma1")
            })?;
            Ok(SaturationValues {
                s: omega * omega / (c.beta * c.gamma1),
                omega: Some(omega),
            })
        }
        SaturationInput::S(s) | SaturationInput::PowerRatio(s) => Ok(SaturationValues {
            s,
            omega: ctx.map(|c| (s * c.beta * c.gamma1).sqrt()),
        }),
    }
}

/// Ratios below this are outside the trusted range of the effective model.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 50.0;
/// Lower edge of the warning band `[WARN_BAND_FLOOR, threshold)`.
pub const WARN_BAND_FLOOR: f64 = 10.0;
/// β/(SΓ₁) at which the relative error of the effective-model Ĩ(S) reaches
/// about 0.5%; the error scales as SΓ₁/β.
pub const DEVIATION_FLAG_RATIO: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityStatus {
    Valid,
    Marginal,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityReport {
    /// β/(SΓ₁); infinite when S = 0.
    pub ratio_drive: f64,
    /// β/Γ₂.
    pub ratio_dephase: f64,
    pub threshold: f64,
    pub valid: bool,
    pub status: ValidityStatus,
    /// SΓ₁/β, the leading-order relative error of the effective-model Ĩ(S).
    pub estimated_i_tilde_deviation: f64,
    /// Set when the estimated deviation is at or above 0.5%.
    pub near_deviation_regime: bool,
}

/// Checks β ≫ SΓ₁ and β ≫ Γ₂ for the adiabatic elimination of |v⟩.
pub fn adiabatic_validity(p: &ThreeLevelParams) -> Result<ValidityReport> {
    adiabatic_validity_with_threshold(p, DEFAULT_VALIDITY_THRESHOLD)
}

pub fn adiabatic_validity_with_threshold(
    p: &ThreeLevelParams,
    threshold: f64,
) -> Result<ValidityReport> {
    p.validate()?;
    let s = p.s();
    let ratio_drive = if s == 0.0 {
        f64::INFINITY
    } else {
        p.beta / (s * p.gamma1)
    };
    let ratio_dephase = p.beta / p.gamma2();
    let worst = ratio_drive.min(ratio_dephase);
    let valid = worst >= threshold;
    let status = if valid {
        ValidityStatus::Valid
    } else if worst >= WARN_BAND_FLOOR.min(threshold) {
        ValidityStatus::Marginal
    } else {
        ValidityStatus::Invalid
    };
    Ok(ValidityReport {
        ratio_drive,
        ratio_dephase,
        threshold,
        valid,
        status,
        estimated_i_tilde_deviation: s * p.gamma1 / p.beta,
        near_deviation_regime: ratio_drive <= DEVIATION_FLAG_RATIO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{build_superoperator, steady_state};
    use crate::units::mhz_over_2pi;

    #[test]
    fn decay_only_relaxes_to_ground() {
        let p = TwoLevelParams::new(1e8, 0.0, 0.0).unwrap();
        let l = build_superoperator(&two_level_liouvillian(&p).unwrap());
        let rho = steady_state(&l).unwrap();
        assert!((rho.population(TWO_LEVEL_GROUND) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_rates_give_measured_dephasing() {
        let p = TwoLevelParams::new(mhz_over_2pi(40.0), mhz_over_2pi(15.0), 1.0).unwrap();
        assert!((p.gamma2() - mhz_over_2pi(35.0)).abs() < 1e-6);
    }

    #[test]
    fn steady_population_at_s_1_3() {
        let p = TwoLevelParams::new(mhz_over_2pi(40.0), mhz_over_2pi(15.0), 1.3).unwrap();
        let l = build_superoperator(&two_level_liouvillian(&p).unwrap());
        let rho = steady_state(&l).unwrap();
        assert!((rho.population(TWO_LEVEL_EXCITED) - 1.3 / 2.3).abs() < 1e-10);
        assert!((1.3f64 / 2.3 - 0.5652).abs() < 1e-4);
    }

    #[test]
    fn undriven_three_level_relaxes_to_ground() {
        let g1 = mhz_over_2pi(40.0);
        let p = ThreeLevelParams::with_rabi(g1, 0.0, 2500.0 * g1, 0.0).unwrap();
        let l = build_superoperator(&three_level_liouvillian(&p).unwrap());
        let rho = steady_state(&l).unwrap();
        assert!((rho.population(THREE_LEVEL_GROUND) - 1.0).abs() < 1e-12);
        assert!(rho.population(THREE_LEVEL_PUMP).abs() < 1e-14);
    }

    #[test]
    fn excited_column_decays_at_gamma1_without_drive() {
        let g1 = 2.0;
        let p = ThreeLevelParams::with_rabi(g1, 0.3, 50.0, 0.0).unwrap();
        let spec = three_level_liouvillian(&p).unwrap();
        let d = spec.apply(&ket_bra(3, THREE_LEVEL_EXCITED, THREE_LEVEL_EXCITED));
        assert!((d[(1, 1)].re + g1).abs() < 1e-15);
        assert!((d[(2, 2)].re - g1).abs() < 1e-15);
    }

    #[test]
    fn saturation_conversions() {
        let g1 = mhz_over_2pi(40.0);
        let beta = 2500.0 * g1;
        let ctx = Some(DriveContext { beta, gamma1: g1 });
        let v = saturation_convert(SaturationInput::Omega((beta * g1).sqrt()), ctx).unwrap();
        assert!((v.s - 1.0).abs() < 1e-12);
        let v = saturation_convert(SaturationInput::PowerRatio(27e-9 / 27e-9), None).unwrap();
        assert_eq!(v.s, 1.0);
        let v = saturation_convert(SaturationInput::S(4.4), ctx).unwrap();
        let want = (4.4f64 * 2500.0).sqrt() * g1;
        assert!((v.omega.unwrap() - want).abs() < 1e-12 * want);
        assert!((v.omega.unwrap() / g1 - 104.88).abs() < 0.01);
        assert!(saturation_convert(SaturationInput::S(-1.0), None).is_err());
        assert!(saturation_convert(SaturationInput::Omega(1.0), None).is_err());
    }

    #[test]
    fn validity_reports() {
        let g1 = 1.0;
        let beta = 2500.0;
        let p = ThreeLevelParams::with_saturation(g1, 0.5, beta, 1.0).unwrap();
        let r = adiabatic_validity(&p).unwrap();
        assert_eq!((r.ratio_drive, r.ratio_dephase), (2500.0, 2500.0));
        assert!(r.valid && !r.near_deviation_regime);

        let p = ThreeLevelParams::with_saturation(g1, 0.5, beta, 500.0).unwrap();
        let r = adiabatic_validity(&p).unwrap();
        assert_eq!(r.ratio_drive, 5.0);
        assert!(!r.valid);
        assert_eq!(r.status, ValidityStatus::Invalid);

        let p = ThreeLevelParams::with_saturation(g1, 0.0, beta, 23.3).unwrap();
        let r = adiabatic_validity(&p).unwrap();
        assert!((r.ratio_drive - 107.3).abs() < 0.1);
        assert!(r.valid);
        assert!(r.near_deviation_regime);

        let p = ThreeLevelParams::with_saturation(g1, 0.0, beta, 100.0).unwrap();
        assert_eq!(
            adiabatic_validity(&p).unwrap().status,
            ValidityStatus::Marginal
        );
    }
}
