use std::cell::RefCell;
use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve::{CorrelationCurve, Regime};
use crate::emitter::EmitterModel;
use crate::error::{Error, Result};
use crate::lindblad::{
    build_superoperator, stack, steady_state, trace_against, unstack, CVector, DensityMatrix,
};
use crate::quadrature::{integrate, Tolerance};

use super::analytic::pulsed_g2_values;

/// Excited populations below this count as "not emitting".
const MIN_EMISSION: f64 = 1e-12;

/// Steady-state HOM curves assembled from quantum-regression correlators:
/// `B(τ) = ½ + (G²(τ) − M|g¹(τ)|²)/(2Pₑ²)`, returned as `1 − V(1 − B)`.
/// Returns `(parallel, perpendicular)` values; perpendicular uses M = 0.
pub fn cw_g2_numeric_values(
    model: &EmitterModel,
    tau: &[f64],
    v: f64,
    m: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = build_superoperator(&model.liouvillian);
    let rho = steady_state(&l)?;
    let sigma = &model.dipole;
    let sigma_dag = sigma.adjoint();
    let number = &sigma_dag * sigma;
    let pe = rho.expectation(&number).re;
    if !(pe > MIN_EMISSION) {
        return Err(Error::argument(format!(
            "no steady-state emission (excited population {pe:.3e})"
        )));
    }
    let x_g1 = stack(&(sigma * rho.matrix()));
    let x_g2 = stack(&(sigma * rho.matrix() * &sigma_dag));

    // Curves are even in τ: evaluate each |τ| once.
    let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
    let mut par = Vec::with_capacity(tau.len());
    let mut perp = Vec::with_capacity(tau.len());
    for &t in tau {
        let x = t.abs();
        let (g2, g1sq) = match cache.get(&x.to_bits()) {
            Some(&hit) => hit,
            None => {
                let p = l.propagator(x)?;
                let g1 = trace_against(&sigma_dag, &(&p * &x_g1));
                let g2 = trace_against(&number, &(&p * &x_g2)).re;
                let val = (g2, g1.norm_sqr());
                cache.insert(x.to_bits(), val);
                val
            }
        };
        let bracket = |mm: f64| 0.5 + (g2 - mm * g1sq) / (2.0 * pe * pe);
        par.push(1.0 - v * (1.0 - bracket(m)));
        perp.push(1.0 - v * (1.0 - bracket(0.0)));
    }
    Ok((par, perp))
}

/// [`cw_g2_numeric_values`] as labelled curves.
pub fn cw_g2_numeric(
    model: &EmitterModel,
    tau: &[f64],
    v: f64,
    m: f64,
) -> Result<(CorrelationCurve, CorrelationCurve)> {
    let (par, perp) = cw_g2_numeric_values(model, tau, v, m)?;
    let par = CorrelationCurve::new(tau.to_vec(), par, Regime::CwNormalized)?
        .with_label("model", "cw_numeric")
        .with_label("polarization", "parallel");
    let perp = CorrelationCurve::new(tau.to_vec(), perp, Regime::CwNormalized)?
        .with_label("model", "cw_numeric")
        .with_label("polarization", "perpendicular");
    Ok((par, perp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulsedMethod {
    Analytic,
    Numeric,
}

/// Emission window, in lifetimes, for the t-integral of the pulsed densities.
const PULSED_T_MAX: f64 = 40.0;

/// Per-pulse coincidence densities for `model` started in its excited state:
/// `G⊥(τ) = ∫ Pₑ(t)Pₑ(t+τ) dt` and `G∥ = G⊥ − ∫ |g¹(t+τ, t)|² dt`,
/// with the t-integral done by adaptive Gauss–Kronrod up to 40/Γ₁.
pub fn pulsed_g2_numeric_values(
    model: &EmitterModel,
    gamma1: f64,
    tau: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = build_superoperator(&model.liouvillian);
    let d = l.dim();
    let rho0 = DensityMatrix::pure(d, model.excited_index());
    let x0 = rho0.stacked();
    let sigma = model.dipole.clone();
    let sigma_dag = sigma.adjoint();
    let number = &sigma_dag * &sigma;
    let t_max = PULSED_T_MAX / gamma1;
    let tol = Tolerance {
        rel: 1e-10,
        abs: 1e-16 / gamma1,
        ..Tolerance::default()
    };

    let states: RefCell<HashMap<u64, CVector>> = RefCell::new(HashMap::new());
    let state_at = |t: f64| -> CVector {
        if let Some(x) = states.borrow().get(&t.to_bits()) {
            return x.clone();
        }
        let x = l.propagator(t).expect("t >= 0") * &x0;
        states.borrow_mut().insert(t.to_bits(), x.clone());
        x
    };
    let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
    let mut par = Vec::with_capacity(tau.len());
    let mut perp = Vec::with_capacity(tau.len());
    for &t in tau {
        let x = t.abs();
        if let Some(&(a, b)) = cache.get(&x.to_bits()) {
            par.push(a);
            perp.push(b);
            continue;
        }
        let p = l.propagator(x)?;
        let uncorrelated = |s: f64| -> f64 {
            let r = state_at(s);
            let pe_now = trace_against(&number, &r).re;
            let pe_later = trace_against(&number, &(&p * &r)).re;
            pe_now * pe_later
        };
        let coherent = |s: f64| -> f64 {
            let r = state_at(s);
            let emitted = stack(&(&sigma * unstack(&r, d)));
            let g1: Complex64 = trace_against(&sigma_dag, &(&p * emitted));
            g1.norm_sqr()
        };
        let g_perp = integrate(uncorrelated, 0.0, t_max, tol)?;
        let g_coh = integrate(coherent, 0.0, t_max, tol)?;
        let g_par = g_perp - g_coh;
        cache.insert(x.to_bits(), (g_par, g_perp));
        par.push(g_par);
        perp.push(g_perp);
    }
    Ok((par, perp))
}

/// Pulsed G²∥ and G²⊥ for a two-level emitter with decay Γ₁ and pure
/// dephasing γ, initially excited.
pub fn pulsed_g2(
    gamma1: f64,
    gamma_pd: f64,
    tau: &[f64],
    method: PulsedMethod,
) -> Result<(CorrelationCurve, CorrelationCurve)> {
    let (par, perp) = match method {
        PulsedMethod::Analytic => tau
            .iter()
            .map(|&t| pulsed_g2_values(t, gamma1, gamma_pd))
            .unzip(),
        PulsedMethod::Numeric => {
            let model = EmitterModel::pulsed(gamma1, gamma_pd)?;
            pulsed_g2_numeric_values(&model, gamma1, tau)?
        }
    };
    let tag = match method {
        PulsedMethod::Analytic => "pulsed_analytic",
        PulsedMethod::Numeric => "pulsed_numeric",
    };
    let par = CorrelationCurve::new(tau.to_vec(), par, Regime::PulsedUnnormalized)?
        .with_label("model", tag)
        .with_label("polarization", "parallel");
    let perp = CorrelationCurve::new(tau.to_vec(), perp, Regime::PulsedUnnormalized)?
        .with_label("model", tag)
        .with_label("polarization", "perpendicular");
    Ok((par, perp))
}
