//! C ABI over `indist`.
//!
//! Every fallible function returns an [`IndistStatus`]; on failure the
//! message is available from [`indist_last_error`] on the same thread.
//! Objects are opaque handles created by `indist_*_new`-style functions and
//! released with the matching `*_free`. Rates are angular (1/s), delays in
//! seconds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use indist::correlation::{
    convolve_irf, cw_g2_analytic, cw_g2_numeric, hbt_g2_analytic, pulsed_g2_values, DetectorIrf,
};
use indist::emitter::{EmitterModel, ThreeLevelParams, TwoLevelParams};
use indist::indist::{
    cw_integral_extract, delay_mismatch_correction, extrapolate_to_zero, i_tilde_analytic,
    i_tilde_mismatched, pulsed_extract, CwExtractOptions, ExtrapolationOptions, ExtrapolationPoint,
    IndistinguishabilityResult, Method,
};
use indist::{CorrelationCurve, Error, Regime};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndistStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument or violated invariant.
    InvalidArgument = 2,
    Io = 3,
    /// Steady-state, extraction or other numerical failure.
    Numerical = 4,
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndistRegime {
    CwNormalized = 0,
    PulsedUnnormalized = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndistMethod {
    PulsedIntegral = 0,
    CwIntegral = 1,
    CwExtrapolated = 2,
    Analytic = 3,
}

/// Plain-data view of an extraction result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IndistResult {
    pub value: f64,
    pub uncertainty: f64,
    pub method: IndistMethod,
    /// NaN when not applicable.
    pub s_at_measurement: f64,
    /// Number of warnings attached to the result (see the last-error text).
    pub n_warnings: u32,
}

/// Opaque correlation curve on a uniform delay grid.
pub struct IndistCurve(CorrelationCurve);

/// Opaque emitter model (Liouvillian plus dipole operator).
pub struct IndistEmitter(EmitterModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IndistStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => IndistStatus::Io,
            4 => IndistStatus::Numerical,
            _ => IndistStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IndistStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IndistStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IndistStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            IndistStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_result(
    out: *mut IndistResult,
    r: &IndistinguishabilityResult,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("result pointer"));
    }
    *out = IndistResult {
        value: r.value,
        uncertainty: r.uncertainty,
        method: match r.method {
            Method::PulsedIntegral => IndistMethod::PulsedIntegral,
            Method::CwIntegral => IndistMethod::CwIntegral,
            Method::CwExtrapolated => IndistMethod::CwExtrapolated,
            Method::Analytic => IndistMethod::Analytic,
        },
        s_at_measurement: r.s_at_measurement.unwrap_or(f64::NAN),
        n_warnings: r.warnings.len() as u32,
    };
    if !r.warnings.is_empty() {
        set_last_error(r.warnings.join("; "));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn indist_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure (or warnings) on this thread; NULL if none.
/// Valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn indist_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn indist_emitter_two_level(
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    out: *mut *mut IndistEmitter,
) -> IndistStatus {
    guard(|| {
        let m = EmitterModel::two_level(&TwoLevelParams::new(gamma1, gamma_pd, s)?)?;
        put(out, IndistEmitter(m))
    })
}

/// Three-level emitter driven at saturation parameter `s`, with `beta` the
/// pump-level relaxation rate.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn indist_emitter_three_level(
    gamma1: f64,
    gamma_pd: f64,
    beta: f64,
    s: f64,
    out: *mut *mut IndistEmitter,
) -> IndistStatus {
    guard(|| {
        let p = ThreeLevelParams::with_saturation(gamma1, gamma_pd, beta, s)?;
        put(out, IndistEmitter(EmitterModel::three_level(&p)?))
    })
}

/// # Safety
/// `e` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn indist_emitter_free(e: *mut IndistEmitter) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Copies `n` samples into a new curve. The grid must be uniform.
///
/// # Safety
/// `tau` and `values` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_curve_new(
    tau: *const f64,
    values: *const f64,
    n: usize,
    regime: IndistRegime,
    out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        let regime = match regime {
            IndistRegime::CwNormalized => Regime::CwNormalized,
            IndistRegime::PulsedUnnormalized => Regime::PulsedUnnormalized,
        };
        let c = CorrelationCurve::new(
            slice(tau, n, "tau")?.to_vec(),
            slice(values, n, "values")?.to_vec(),
            regime,
        )?;
        put(out, IndistCurve(c))
    })
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `c` must be NULL or a live curve handle.
#[no_mangle]
pub unsafe extern "C" fn indist_curve_len(c: *const IndistCurve) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the grid and/or values (either may be NULL) into buffers of
/// capacity `cap`.
///
/// # Safety
/// Non-NULL buffers must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn indist_curve_copy(
    c: *const IndistCurve,
    tau_out: *mut f64,
    values_out: *mut f64,
    cap: usize,
) -> IndistStatus {
    guard(|| {
        let c = &handle(c, "curve")?.0;
        if cap < c.len() {
            return Err(Failure(
                IndistStatus::BufferTooSmall,
                format!("buffer holds {cap} samples, curve has {}", c.len()),
            ));
        }
        for (src, dst) in [(c.tau(), tau_out), (c.values(), values_out)] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
            }
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn indist_curve_free(c: *mut IndistCurve) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// HBT antibunching curve 1 − V·e^(−Γ₁(1+S)|τ|).
///
/// # Safety
/// `tau` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_hbt_g2(
    tau: *const f64,
    n: usize,
    gamma1: f64,
    s: f64,
    v: f64,
    out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        put(
            out,
            IndistCurve(hbt_g2_analytic(slice(tau, n, "tau")?, gamma1, s, v)?),
        )
    })
}

/// Effective two-level cw interference curve; `m = 0` gives the
/// perpendicular-polarization curve.
///
/// # Safety
/// `tau` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_cw_g2(
    tau: *const f64,
    n: usize,
    gamma1: f64,
    gamma_pd: f64,
    s: f64,
    v: f64,
    m: f64,
    out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        let c = cw_g2_analytic(slice(tau, n, "tau")?, gamma1, gamma_pd, s, v, m)?;
        put(out, IndistCurve(c))
    })
}

/// cw interference curves of a full emitter model by quantum regression.
///
/// # Safety
/// `emitter` must be live, `tau` must point to `n` doubles and both outputs
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_cw_g2_numeric(
    emitter: *const IndistEmitter,
    tau: *const f64,
    n: usize,
    v: f64,
    m: f64,
    par_out: *mut *mut IndistCurve,
    perp_out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        if par_out.is_null() || perp_out.is_null() {
            return Err(null("output pointer"));
        }
        let e = handle(emitter, "emitter")?;
        let (par, perp) = cw_g2_numeric(&e.0, slice(tau, n, "tau")?, v, m)?;
        put(par_out, IndistCurve(par))?;
        put(perp_out, IndistCurve(perp))
    })
}

/// Per-pulse coincidence densities of an initially excited two-level emitter.
///
/// # Safety
/// `tau` must point to `n` doubles; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_pulsed_g2(
    tau: *const f64,
    n: usize,
    gamma1: f64,
    gamma_pd: f64,
    par_out: *mut *mut IndistCurve,
    perp_out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        if par_out.is_null() || perp_out.is_null() {
            return Err(null("output pointer"));
        }
        if !(gamma1 > 0.0) || !(gamma_pd >= 0.0) {
            return Err(Failure(
                IndistStatus::InvalidArgument,
                "pulsed curves need gamma1 > 0 and gamma_pd >= 0".into(),
            ));
        }
        let tau = slice(tau, n, "tau")?;
        let (par, perp): (Vec<f64>, Vec<f64>) = tau
            .iter()
            .map(|&t| pulsed_g2_values(t, gamma1, gamma_pd))
            .unzip();
        let par = CorrelationCurve::new(tau.to_vec(), par, Regime::PulsedUnnormalized)?;
        let perp = CorrelationCurve::new(tau.to_vec(), perp, Regime::PulsedUnnormalized)?;
        put(par_out, IndistCurve(par))?;
        put(perp_out, IndistCurve(perp))
    })
}

/// Convolves with a gaussian detector response of standard deviation `sigma`.
///
/// # Safety
/// `c` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_convolve_gaussian(
    c: *const IndistCurve,
    sigma: f64,
    out: *mut *mut IndistCurve,
) -> IndistStatus {
    guard(|| {
        let c = handle(c, "curve")?;
        put(
            out,
            IndistCurve(convolve_irf(&c.0, &DetectorIrf::Gaussian { sigma })?),
        )
    })
}

/// Ĩ from the dip integrals of cw curves over `|τ| ≤ window`; `window <= 0`
/// integrates the whole grid.
///
/// # Safety
/// Curves must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_cw_integral_extract(
    par: *const IndistCurve,
    perp: *const IndistCurve,
    window: f64,
    out: *mut IndistResult,
) -> IndistStatus {
    guard(|| {
        let opts = CwExtractOptions {
            window: (window > 0.0).then_some(window),
            ..Default::default()
        };
        let r = cw_integral_extract(&handle(par, "par")?.0, &handle(perp, "perp")?.0, &opts)?;
        put_result(out, &r)
    })
}

/// Pulsed 𝓘 from the central-feature areas over `|τ| ≤ central_window`;
/// `central_window <= 0` uses all data.
///
/// # Safety
/// Curves must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_pulsed_extract(
    par: *const IndistCurve,
    perp: *const IndistCurve,
    central_window: f64,
    out: *mut IndistResult,
) -> IndistStatus {
    guard(|| {
        let r = pulsed_extract(
            &handle(par, "par")?.0,
            &handle(perp, "perp")?.0,
            (central_window > 0.0).then_some(central_window),
            None,
        )?;
        put_result(out, &r)
    })
}

/// Ĩ(S) = M·Γ₁(1+S)/(Γ₁(1+S) + 2γ).
#[no_mangle]
pub extern "C" fn indist_i_tilde_analytic(s: f64, gamma1: f64, gamma_pd: f64, m: f64) -> f64 {
    i_tilde_analytic(s, gamma1, gamma_pd, m)
}

/// Ĩ when the parallel and perpendicular runs used drives S₁ and S₂.
#[no_mangle]
pub extern "C" fn indist_i_tilde_mismatched(s1: f64, s2: f64, gamma1: f64, gamma_pd: f64) -> f64 {
    i_tilde_mismatched(s1, s2, gamma1, gamma_pd)
}

/// Divides out the visibility factor e^(−Γ₁Δτ) of an interferometer delay
/// mismatch. Either output may be NULL.
///
/// # Safety
/// Non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn indist_delay_mismatch_correction(
    i_raw: f64,
    gamma1: f64,
    delta_tau: f64,
    corrected_out: *mut f64,
    factor_out: *mut f64,
) -> IndistStatus {
    guard(|| {
        let d = delay_mismatch_correction(i_raw, gamma1, delta_tau)?;
        if let Some(w) = &d.warning {
            set_last_error(w.clone());
        }
        if !corrected_out.is_null() {
            *corrected_out = d.corrected;
        }
        if !factor_out.is_null() {
            *factor_out = d.factor;
        }
        Ok(())
    })
}

/// Fits Ĩ(S) with M free and γ fixed, returning 𝓘 = Ĩ(0). `sigma` may be
/// NULL for an unweighted fit.
///
/// # Safety
/// `s` and `i_tilde` (and `sigma` if given) must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn indist_extrapolate_to_zero(
    s: *const f64,
    i_tilde: *const f64,
    sigma: *const f64,
    n: usize,
    gamma1: f64,
    gamma_pd: f64,
    out: *mut IndistResult,
) -> IndistStatus {
    guard(|| {
        let s = slice(s, n, "s")?;
        let y = slice(i_tilde, n, "i_tilde")?;
        let sig = if sigma.is_null() {
            None
        } else {
            Some(slice(sigma, n, "sigma")?)
        };
        let points: Vec<ExtrapolationPoint> = (0..n)
            .map(|k| ExtrapolationPoint {
                s: s[k],
                i_tilde: y[k],
                sigma: sig.map_or(0.0, |x| x[k]),
                sigma_s: 0.0,
            })
            .collect();
        let r = extrapolate_to_zero(&points, gamma1, gamma_pd, &ExtrapolationOptions::default())?;
        put_result(out, &r)
    })
}
