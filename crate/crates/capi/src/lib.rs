//! C ABI for the simulation library: opaque handles, integer status codes,
//! and a per-thread last-error message. The matching declarations live in
//! `include/stathyp.h`; a test checks the two stay in sync.
//!
//! Conventions:
//! * every function returns a status code; results go through out-pointers,
//! * handles are created and destroyed only by this library,
//! * on a nonzero status, `stathyp_last_error` describes the failure for the
//!   calling thread until its next library call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use stathyp::estimators::{
    estimate_drift, estimate_e, recurrence_frequency, separation_probability, BoundaryLaw,
    MonteCarloEstimate,
};
use stathyp::geom::HalfPlanePoint;
use stathyp::walk::{GroupDistribution, RngSpec};

pub const STATHYP_OK: i32 = 0;
/// A required pointer argument was null.
pub const STATHYP_ERR_NULL: i32 = 1;
/// A string argument was not valid UTF-8.
pub const STATHYP_ERR_UTF8: i32 = 2;
/// Invalid parameter (unknown builtin, bad base point, bad estimator input).
pub const STATHYP_ERR_PARAM: i32 = 3;
/// The estimator ran and failed (non-convergence budget exceeded).
pub const STATHYP_ERR_ESTIMATOR: i32 = 4;
/// Internal panic; the library state is still valid.
pub const STATHYP_ERR_PANIC: i32 = 5;

/// Opaque handle around a finitely supported isometry distribution.
pub struct StathypDistribution(GroupDistribution);

/// One Monte Carlo estimate, mirrored as a plain C struct.
#[repr(C)]
#[derive(Clone, Copy, Default)]
pub struct StathypEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub n_failures: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
}

fn fill(out: &mut StathypEstimate, e: &MonteCarloEstimate) {
    out.mean = e.mean;
    out.stderr = e.stderr;
    out.n_samples = e.n_samples as u64;
    out.n_failures = e.n_failures as u64;
}

/// Guard an FFI body: catch panics, route errors to the thread-local slot.
fn guarded(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => STATHYP_OK,
        Ok(Err((code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            STATHYP_ERR_PANIC
        }
    }
}

fn estimator_code(e: &stathyp::estimators::EstimatorError) -> i32 {
    use stathyp::estimators::EstimatorError::*;
    match e {
        TooManyFailures { .. } => STATHYP_ERR_ESTIMATOR,
        _ => STATHYP_ERR_PARAM,
    }
}

fn base_point(re: f64, im: f64) -> Result<stathyp::geom::ModelPoint, (i32, String)> {
    HalfPlanePoint::new(re, im)
        .map(|z| z.to_model())
        .map_err(|e| (STATHYP_ERR_PARAM, e.to_string()))
}

unsafe fn dist_ref<'a>(
    d: *const StathypDistribution,
) -> Result<&'a GroupDistribution, (i32, String)> {
    match d.as_ref() {
        Some(h) => Ok(&h.0),
        None => Err((STATHYP_ERR_NULL, "null distribution handle".into())),
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (i32, String)> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => Err((STATHYP_ERR_NULL, format!("null out-pointer {name}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stathyp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the calling thread's most recent failure; empty string after
/// a success. Valid until the thread's next call into the library.
#[no_mangle]
pub extern "C" fn stathyp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Create a distribution from a builtin name ("psl2z-uniform-TTS",
/// "parabolic-pointmass", "hyperbolic-pointmass(l)").
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stathyp_distribution_builtin(
    name: *const c_char,
    out: *mut *mut StathypDistribution,
) -> i32 {
    guarded(|| {
        let out = out_ref(out, "out")?;
        if name.is_null() {
            return Err((STATHYP_ERR_NULL, "null name".into()));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|e| (STATHYP_ERR_UTF8, e.to_string()))?;
        let dist = GroupDistribution::builtin(name)
            .map_err(|e| (STATHYP_ERR_PARAM, e.to_string()))?;
        *out = Box::into_raw(Box::new(StathypDistribution(dist)));
        Ok(())
    })
}

/// Destroy a distribution handle. Null is a no-op.
///
/// # Safety
/// `d` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stathyp_distribution_free(d: *mut StathypDistribution) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// E-estimate at radius r from n_pairs coupled harmonic pairs, base point
/// re + im*i in the upper half-plane.
///
/// # Safety
/// `d` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stathyp_estimate_e(
    d: *const StathypDistribution,
    re: f64,
    im: f64,
    r: f64,
    n_pairs: u64,
    seed: u64,
    out: *mut StathypEstimate,
) -> i32 {
    guarded(|| {
        let dist = dist_ref(d)?;
        let out = out_ref(out, "out")?;
        let x = base_point(re, im)?;
        let law = BoundaryLaw::Harmonic(dist.clone());
        let e = estimate_e(&law, &x, r, n_pairs as usize, &RngSpec::new(seed))
            .map_err(|e| (estimator_code(&e), e.to_string()))?;
        fill(out, &e);
        Ok(())
    })
}

/// Drift estimate d(x, w_n x)/n over n_samples walks.
///
/// # Safety
/// `d` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stathyp_estimate_drift(
    d: *const StathypDistribution,
    re: f64,
    im: f64,
    n: u64,
    n_samples: u64,
    seed: u64,
    out: *mut StathypEstimate,
) -> i32 {
    guarded(|| {
        let dist = dist_ref(d)?;
        let out = out_ref(out, "out")?;
        let x = base_point(re, im)?;
        let e = estimate_drift(dist, &x, n as usize, n_samples as usize, &RngSpec::new(seed))
            .map_err(|e| (estimator_code(&e), e.to_string()))?;
        fill(out, &e);
        Ok(())
    })
}

/// Recurrence estimates: frequency of R-recurrence times along n steps, and
/// the fraction of paths within R/3 of their tracked geodesic at time 0.
///
/// # Safety
/// `d` must be a live handle; `out_freq` and `out_lambda` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stathyp_recurrence(
    d: *const StathypDistribution,
    re: f64,
    im: f64,
    big_r: f64,
    n: u64,
    n_samples: u64,
    seed: u64,
    out_freq: *mut StathypEstimate,
    out_lambda: *mut StathypEstimate,
) -> i32 {
    guarded(|| {
        let dist = dist_ref(d)?;
        let out_freq = out_ref(out_freq, "out_freq")?;
        let out_lambda = out_ref(out_lambda, "out_lambda")?;
        let x = base_point(re, im)?;
        let (freq, lam) = recurrence_frequency(
            dist,
            &x,
            big_r,
            n as usize,
            n_samples as usize,
            &RngSpec::new(seed),
        )
        .map_err(|e| (estimator_code(&e), e.to_string()))?;
        fill(out_freq, &freq);
        fill(out_lambda, &lam);
        Ok(())
    })
}

/// Probability that coupled ray pairs stay M-separated on [eta r, r].
///
/// # Safety
/// `d` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stathyp_separation(
    d: *const StathypDistribution,
    re: f64,
    im: f64,
    m_sep: f64,
    eta: f64,
    r: f64,
    n_pairs: u64,
    delta: f64,
    seed: u64,
    out: *mut StathypEstimate,
) -> i32 {
    guarded(|| {
        let dist = dist_ref(d)?;
        let out = out_ref(out, "out")?;
        let x = base_point(re, im)?;
        let e = separation_probability(
            dist,
            &x,
            m_sep,
            eta,
            r,
            n_pairs as usize,
            delta,
            &RngSpec::new(seed),
        )
        .map_err(|e| (estimator_code(&e), e.to_string()))?;
        fill(out, &e);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    #[test]
    fn round_trip_through_the_c_surface() {
        unsafe {
            let name = CString::new("psl2z-uniform-TTS").unwrap();
            let mut handle: *mut StathypDistribution = ptr::null_mut();
            assert_eq!(stathyp_distribution_builtin(name.as_ptr(), &mut handle), STATHYP_OK);
            assert!(!handle.is_null());

            let mut est = StathypEstimate::default();
            assert_eq!(
                stathyp_estimate_e(handle, 0.0, 1.0, 10.0, 100, 42, &mut est),
                STATHYP_OK
            );
            assert!(est.mean > 1.0 && est.mean < 2.0);
            assert_eq!(est.n_samples, 100);

            // matches the Rust-level call exactly
            let dist = GroupDistribution::builtin("psl2z-uniform-TTS").unwrap();
            let x = HalfPlanePoint::new(0.0, 1.0).unwrap().to_model();
            let law = BoundaryLaw::Harmonic(dist);
            let direct = estimate_e(&law, &x, 10.0, 100, &RngSpec::new(42)).unwrap();
            assert_eq!(est.mean.to_bits(), direct.mean.to_bits());
            assert_eq!(est.stderr.to_bits(), direct.stderr.to_bits());

            let mut drift = StathypEstimate::default();
            assert_eq!(
                stathyp_estimate_drift(handle, 0.0, 1.0, 200, 20, 1, &mut drift),
                STATHYP_OK
            );
            assert!(drift.mean > 0.0);

            let (mut freq, mut lam) = (StathypEstimate::default(), StathypEstimate::default());
            assert_eq!(
                stathyp_recurrence(handle, 0.0, 1.0, 9.0, 10, 10, 2, &mut freq, &mut lam),
                STATHYP_OK
            );
            assert!(lam.mean >= 0.0 && lam.mean <= 1.0);

            let mut sep = StathypEstimate::default();
            assert_eq!(
                stathyp_separation(handle, 0.0, 1.0, 3.0, 0.2, 10.0, 20, 0.1, 3, &mut sep),
                STATHYP_OK
            );
            assert!(sep.mean >= 0.0 && sep.mean <= 1.0);

            stathyp_distribution_free(handle);
        }
    }

    #[test]
    fn error_paths_set_codes_and_messages() {
        unsafe {
            let mut handle: *mut StathypDistribution = ptr::null_mut();
            let bad = CString::new("no-such-builtin").unwrap();
            assert_eq!(
                stathyp_distribution_builtin(bad.as_ptr(), &mut handle),
                STATHYP_ERR_PARAM
            );
            let msg = CStr::from_ptr(stathyp_last_error()).to_str().unwrap();
            assert!(msg.contains("no-such-builtin"), "{msg}");

            assert_eq!(
                stathyp_distribution_builtin(ptr::null(), &mut handle),
                STATHYP_ERR_NULL
            );

            let name = CString::new("psl2z-uniform-TTS").unwrap();
            assert_eq!(stathyp_distribution_builtin(name.as_ptr(), &mut handle), STATHYP_OK);
            let mut est = StathypEstimate::default();
            // im <= 0 is not a half-plane point
            assert_eq!(
                stathyp_estimate_e(handle, 0.0, -1.0, 10.0, 10, 0, &mut est),
                STATHYP_ERR_PARAM
            );
            // success clears the error
            assert_eq!(
                stathyp_estimate_e(handle, 0.0, 1.0, 5.0, 10, 0, &mut est),
                STATHYP_OK
            );
            let msg = CStr::from_ptr(stathyp_last_error()).to_str().unwrap();
            assert!(msg.is_empty());
            stathyp_distribution_free(handle);
        }
    }

    #[test]
    fn version_is_package_version() {
        unsafe {
            let v = CStr::from_ptr(stathyp_version()).to_str().unwrap();
            assert_eq!(v, env!("CARGO_PKG_VERSION"));
        }
    }

    /// The hand-written header must declare every exported symbol.
    #[test]
    fn header_matches_exports() {
        let header = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/include/stathyp.h"
        ))
        .expect("include/stathyp.h present");
        for symbol in [
            "stathyp_version",
            "stathyp_last_error",
            "stathyp_distribution_builtin",
            "stathyp_distribution_free",
            "stathyp_estimate_e",
            "stathyp_estimate_drift",
            "stathyp_recurrence",
            "stathyp_separation",
            "StathypEstimate",
            "StathypDistribution",
            "STATHYP_OK",
            "STATHYP_ERR_NULL",
            "STATHYP_ERR_UTF8",
            "STATHYP_ERR_PARAM",
            "STATHYP_ERR_ESTIMATOR",
            "STATHYP_ERR_PANIC",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
