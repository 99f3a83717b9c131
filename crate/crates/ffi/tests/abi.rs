use std::ffi::CStr;
use std::ptr;

use indist_ffi::*;

const G1: f64 = 2.0 * std::f64::consts::PI * 40e6;
const GPD: f64 = 2.0 * std::f64::consts::PI * 15e6;

fn grid(half: f64, step: f64) -> Vec<f64> {
    let n = (half / step).round() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

fn last_error() -> String {
    let p = indist_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(indist_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn cw_curves_extract_the_closed_form() {
    let tau = grid(60e-9, 0.01e-9);
    let s = 1.3;
    let (mut par, mut perp) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(
            indist_cw_g2(tau.as_ptr(), tau.len(), G1, GPD, s, 1.0, 1.0, &mut par),
            IndistStatus::Ok
        );
        assert_eq!(
            indist_cw_g2(tau.as_ptr(), tau.len(), G1, GPD, s, 1.0, 0.0, &mut perp),
            IndistStatus::Ok
        );
        assert_eq!(indist_curve_len(par), tau.len());

        let mut r = std::mem::zeroed::<IndistResult>();
        assert_eq!(
            indist_cw_integral_extract(par, perp, 0.0, &mut r),
            IndistStatus::Ok
        );
        assert_eq!(r.method, IndistMethod::CwIntegral);
        let want = indist_i_tilde_analytic(s, G1, GPD, 1.0);
        assert!((r.value - want).abs() < 1e-5, "{} vs {want}", r.value);

        // The detector response leaves the integral unchanged.
        let (mut cp, mut cq) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            indist_convolve_gaussian(par, 0.35e-9, &mut cp),
            IndistStatus::Ok
        );
        assert_eq!(
            indist_convolve_gaussian(perp, 0.35e-9, &mut cq),
            IndistStatus::Ok
        );
        let mut rc = std::mem::zeroed::<IndistResult>();
        assert_eq!(
            indist_cw_integral_extract(cp, cq, 40e-9, &mut rc),
            IndistStatus::Ok
        );
        assert!((rc.value - r.value).abs() < 1e-4 * r.value);

        let mut vals = vec![0.0; tau.len()];
        assert_eq!(
            indist_curve_copy(cp, ptr::null_mut(), vals.as_mut_ptr(), vals.len()),
            IndistStatus::Ok
        );
        assert!(vals[tau.len() / 2] > 0.0);
        assert_eq!(
            indist_curve_copy(cp, ptr::null_mut(), vals.as_mut_ptr(), 3),
            IndistStatus::BufferTooSmall
        );

        for c in [par, perp, cp, cq] {
            indist_curve_free(c);
        }
    }
}

#[test]
fn numeric_two_level_matches_analytic_at_low_drive() {
    let tau = grid(20e-9, 0.05e-9);
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(
            indist_emitter_three_level(G1, GPD, 1e12, 0.5, &mut e),
            IndistStatus::Ok
        );
        let (mut par, mut perp) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            indist_cw_g2_numeric(e, tau.as_ptr(), tau.len(), 1.0, 1.0, &mut par, &mut perp),
            IndistStatus::Ok
        );
        let mut r = std::mem::zeroed::<IndistResult>();
        assert_eq!(
            indist_cw_integral_extract(par, perp, 0.0, &mut r),
            IndistStatus::Ok
        );
        let want = indist_i_tilde_analytic(0.5, G1, GPD, 1.0);
        assert!((r.value - want).abs() < 2e-3, "{} vs {want}", r.value);
        indist_curve_free(par);
        indist_curve_free(perp);
        indist_emitter_free(e);
    }
}

#[test]
fn pulsed_extract_and_delay_correction() {
    let tau = grid(80e-9, 0.01e-9);
    unsafe {
        let (mut par, mut perp) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            indist_pulsed_g2(tau.as_ptr(), tau.len(), G1, GPD, &mut par, &mut perp),
            IndistStatus::Ok
        );
        let mut r = std::mem::zeroed::<IndistResult>();
        assert_eq!(
            indist_pulsed_extract(par, perp, 0.0, &mut r),
            IndistStatus::Ok
        );
        assert_eq!(r.method, IndistMethod::PulsedIntegral);
        let want = G1 / (G1 + 2.0 * GPD);
        assert!((r.value - want).abs() < 1e-6);

        let (mut corrected, mut factor) = (0.0, 0.0);
        assert_eq!(
            indist_delay_mismatch_correction(0.48, G1, 0.4e-9, &mut corrected, &mut factor),
            IndistStatus::Ok
        );
        assert!((factor - (-G1 * 0.4e-9f64).exp()).abs() < 1e-15);
        assert!((corrected - 0.48 / factor).abs() < 1e-15);

        // A cw extraction refuses pulsed curves.
        assert_eq!(
            indist_cw_integral_extract(par, perp, 0.0, &mut r),
            IndistStatus::InvalidArgument
        );
        assert!(last_error().contains("cw_normalized"));
        indist_curve_free(par);
        indist_curve_free(perp);
    }
}

#[test]
fn extrapolation_recovers_zero_drive_value() {
    let s = [0.5, 1.3, 2.5, 4.4];
    let y: Vec<f64> = s
        .iter()
        .map(|&s| indist_i_tilde_analytic(s, G1, GPD, 0.96))
        .collect();
    unsafe {
        let mut r = std::mem::zeroed::<IndistResult>();
        let st = indist_extrapolate_to_zero(
            s.as_ptr(),
            y.as_ptr(),
            ptr::null(),
            s.len(),
            G1,
            GPD,
            &mut r,
        );
        assert_eq!(st, IndistStatus::Ok);
        assert_eq!(r.method, IndistMethod::CwExtrapolated);
        assert!((r.value - indist_i_tilde_analytic(0.0, G1, GPD, 0.96)).abs() < 1e-10);
    }
    assert!(
        (indist_i_tilde_mismatched(1.3, 1.3, G1, GPD) - indist_i_tilde_analytic(1.3, G1, GPD, 1.0))
            .abs()
            < 1e-12
    );
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(
            indist_emitter_two_level(-1.0, GPD, 1.0, &mut e),
            IndistStatus::InvalidArgument
        );
        assert!(e.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(
            indist_emitter_two_level(G1, GPD, 1.0, ptr::null_mut()),
            IndistStatus::NullPointer
        );
        let mut c = ptr::null_mut();
        assert_eq!(
            indist_curve_new(
                ptr::null(),
                ptr::null(),
                4,
                IndistRegime::CwNormalized,
                &mut c
            ),
            IndistStatus::NullPointer
        );

        let tau = [0.0, 1.0, 3.0];
        let v = [1.0; 3];
        assert_eq!(
            indist_curve_new(
                tau.as_ptr(),
                v.as_ptr(),
                3,
                IndistRegime::CwNormalized,
                &mut c
            ),
            IndistStatus::InvalidArgument
        );
        assert!(last_error().contains("uniform"), "{}", last_error());

        let mut r = std::mem::zeroed::<IndistResult>();
        assert_eq!(
            indist_cw_integral_extract(ptr::null(), ptr::null(), 0.0, &mut r),
            IndistStatus::NullPointer
        );
        assert_eq!(
            indist_delay_mismatch_correction(0.5, G1, -1.0, ptr::null_mut(), ptr::null_mut()),
            IndistStatus::InvalidArgument
        );

        indist_curve_free(ptr::null_mut());
        indist_emitter_free(ptr::null_mut());
    }
}
