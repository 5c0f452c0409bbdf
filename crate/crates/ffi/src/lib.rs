//! C ABI over the `edetect` calibrations and detectors.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns an [`EdStatus`] and, on
//! failure, stores a message retrievable with [`ed_last_error_message`] on the
//! same thread. Panics never cross the boundary; they surface as
//! [`EdStatus::Panic`].
//!
//! Pointer arguments must be null or valid for the access their type
//! implies; handles must come from this library and not be used after free.

// The pointer contract above is the caller's; entry points stay callable
// without `unsafe` from Rust tests.
#![allow(clippy::not_unsafe_ptr_arg_deref)]
// Negated float comparisons reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use edetect::calibration::{build_adaptive_calibration, compute_baseline};
use edetect::detectors::{crosses, Detector};
use edetect::increments::IncrementKind;
use edetect::psi::PsiFamily;
use edetect::simulate::DetectorConfig;
use edetect::{Error, ErrorClass};

/// Outcome of an FFI call. Error codes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Calibration = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

impl From<&Error> for EdStatus {
    fn from(e: &Error) -> Self {
        match e.class() {
            ErrorClass::Config => EdStatus::Config,
            ErrorClass::Data => EdStatus::Data,
            ErrorClass::Calibration => EdStatus::Calibration,
            ErrorClass::Numeric => EdStatus::Numeric,
            ErrorClass::Io => EdStatus::Io,
        }
    }
}

/// Which statistic [`ed_detector_run`] compares against its threshold.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdStatistic {
    ShiryaevRoberts = 0,
    Cusum = 1,
}

/// A detector configuration: calibrated weights, grid and increment family.
pub struct EdCalibration {
    config: DetectorConfig,
}

/// A running detector; owns its recursion state.
pub struct EdDetector {
    inner: Box<dyn Detector + Send>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> EdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => EdStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed as {what}"));
            EdStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            EdStatus::from(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            EdStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer obtained from this library
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: as in `non_null`; the caller guarantees exclusive access
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and, by contract, valid for a write of T
    unsafe { out.write(value) };
    Ok(())
}

fn write_opt<T>(out: *mut T, value: T) {
    if !out.is_null() {
        // SAFETY: as in `write_out`
        unsafe { out.write(value) };
    }
}

fn emit_calibration(out: *mut *mut EdCalibration, config: DetectorConfig) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    write_out(out, Box::into_raw(Box::new(EdCalibration { config })), "out")
}

/// Message of the last failed call on this thread, or null if the last call
/// succeeded. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ed_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Finite mixture calibrated for binary data with pre-change success
/// probability at most `p0`, targeting gaps `Δ ∈ [delta_lower, delta_upper]`.
#[no_mangle]
pub extern "C" fn ed_calibrate_bernoulli(
    alpha: f64,
    p0: f64,
    delta_lower: f64,
    delta_upper: f64,
    k_max: usize,
    out: *mut *mut EdCalibration,
) -> EdStatus {
    guard(|| {
        let family = PsiFamily::bernoulli(p0)?;
        let calibration = compute_baseline(alpha, delta_lower, delta_upper, k_max, family)?;
        emit_calibration(
            out,
            DetectorConfig::Mixture {
                calibration,
                increment: IncrementKind::ExpBernoulli { p0 },
            },
        )
    })
}

/// Finite mixture calibrated for `[0,1]`-valued data with pre-change mean at
/// most `mean_bound`; `delta_lower`/`delta_upper` bound the mean-to-variance
/// ratio. `exact` selects the linear increment `1 + λ(x/m − 1)`.
#[no_mangle]
pub extern "C" fn ed_calibrate_bounded(
    alpha: f64,
    mean_bound: f64,
    delta_lower: f64,
    delta_upper: f64,
    k_max: usize,
    exact: bool,
    out: *mut *mut EdCalibration,
) -> EdStatus {
    guard(|| {
        let increment = if exact {
            IncrementKind::ExactBounded { mean_bound }
        } else {
            IncrementKind::ExpBounded { mean_bound }
        };
        increment.validate()?;
        let calibration = compute_baseline(alpha, delta_lower, delta_upper, k_max, PsiFamily::SubExponential)?;
        emit_calibration(out, DetectorConfig::Mixture { calibration, increment })
    })
}

/// Adaptive mixture for binary data: a core grid on `[delta_lower, delta0]`
/// carrying weight `r`, extended towards small gaps as the stream grows.
#[no_mangle]
pub extern "C" fn ed_calibrate_adaptive_bernoulli(
    alpha: f64,
    p0: f64,
    delta_lower: f64,
    delta0: f64,
    r: f64,
    schedule_density: f64,
    k_max: usize,
    out: *mut *mut EdCalibration,
) -> EdStatus {
    guard(|| {
        let family = PsiFamily::bernoulli(p0)?;
        let calibration = build_adaptive_calibration(alpha, delta_lower, delta0, r, schedule_density, k_max, family)?;
        emit_calibration(
            out,
            DetectorConfig::Adaptive {
                calibration,
                increment: IncrementKind::ExpBernoulli { p0 },
            },
        )
    })
}

/// Parses a calibration file as written by `edetect calibrate`.
#[no_mangle]
pub extern "C" fn ed_calibration_from_toml(text: *const c_char, out: *mut *mut EdCalibration) -> EdStatus {
    guard(|| {
        if text.is_null() {
            return Err(Failure::Null("text"));
        }
        // SAFETY: non-null and, by contract, NUL-terminated
        let text = unsafe { CStr::from_ptr(text) }
            .to_str()
            .map_err(|e| Error::Config(format!("calibration text is not UTF-8: {e}")))?;
        emit_calibration(out, DetectorConfig::from_toml(text)?)
    })
}

/// Serializes a calibration; free the string with [`ed_string_free`].
#[no_mangle]
pub extern "C" fn ed_calibration_to_toml(cal: *const EdCalibration, out: *mut *mut c_char) -> EdStatus {
    guard(|| {
        let cal = non_null(cal, "cal")?;
        let text = cal.config.to_toml()?;
        let c = CString::new(text).map_err(|e| Error::Numeric(format!("serialized calibration has NUL: {e}")))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// Significance level the calibration was built for.
#[no_mangle]
pub extern "C" fn ed_calibration_alpha(cal: *const EdCalibration, out: *mut f64) -> EdStatus {
    guard(|| {
        let cal = non_null(cal, "cal")?;
        let alpha = cal
            .config
            .alpha()
            .ok_or_else(|| Error::Config("the trivial detector has no calibration".into()))?;
        write_out(out, alpha, "out")
    })
}

/// Number of baseline components present before the first observation.
#[no_mangle]
pub extern "C" fn ed_calibration_num_components(cal: *const EdCalibration, out: *mut usize) -> EdStatus {
    guard(|| {
        let cal = non_null(cal, "cal")?;
        let k = match &cal.config {
            DetectorConfig::Trivial => 1,
            DetectorConfig::Mixture { calibration, .. } | DetectorConfig::ConstantAdaptive { calibration, .. } => {
                calibration.num_components()
            }
            DetectorConfig::Adaptive { calibration, .. } => calibration.core.num_components(),
        };
        write_out(out, k, "out")
    })
}

#[no_mangle]
pub extern "C" fn ed_calibration_free(cal: *mut EdCalibration) {
    if !cal.is_null() {
        // SAFETY: produced by Box::into_raw in this library and freed once
        drop(unsafe { Box::from_raw(cal) });
    }
}

/// Fresh detector for `cal`; the calibration may be freed afterwards.
#[no_mangle]
pub extern "C" fn ed_detector_new(cal: *const EdCalibration, out: *mut *mut EdDetector) -> EdStatus {
    guard(|| {
        let cal = non_null(cal, "cal")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = cal.config.build()?;
        write_out(out, Box::into_raw(Box::new(EdDetector { inner })), "out")
    })
}

/// Feeds one observation. `log_m_sr` and `log_m_cusum` may be null.
/// A rejected observation leaves the detector unchanged.
#[no_mangle]
pub extern "C" fn ed_detector_observe(
    det: *mut EdDetector,
    x: f64,
    log_m_sr: *mut f64,
    log_m_cusum: *mut f64,
) -> EdStatus {
    guard(|| {
        let det = non_null_mut(det, "det")?;
        let v = det.inner.observe(x)?;
        write_opt(log_m_sr, v.log_m_sr);
        write_opt(log_m_cusum, v.log_m_cs);
        Ok(())
    })
}

/// Feeds `xs[0..n]` until the chosen statistic reaches `log_threshold`.
/// `*stop` receives the 1-based step of the crossing within this call, or 0
/// if none occurred; `*consumed` (nullable) the number of observations used.
#[no_mangle]
pub extern "C" fn ed_detector_run(
    det: *mut EdDetector,
    xs: *const f64,
    n: usize,
    statistic: EdStatistic,
    log_threshold: f64,
    stop: *mut usize,
    consumed: *mut usize,
) -> EdStatus {
    guard(|| {
        let det = non_null_mut(det, "det")?;
        if stop.is_null() {
            return Err(Failure::Null("stop"));
        }
        if !(log_threshold > 0.0) {
            return Err(Error::Config(format!("log threshold must be positive, got {log_threshold}")).into());
        }
        let xs: &[f64] = if n == 0 {
            &[]
        } else {
            if xs.is_null() {
                return Err(Failure::Null("xs"));
            }
            // SAFETY: non-null and, by contract, valid for n reads
            unsafe { std::slice::from_raw_parts(xs, n) }
        };
        let mut hit = 0;
        let mut used = 0;
        let mut failure = None;
        for (i, &x) in xs.iter().enumerate() {
            match det.inner.observe(x) {
                Ok(v) => {
                    used = i + 1;
                    let m = match statistic {
                        EdStatistic::ShiryaevRoberts => v.log_m_sr,
                        EdStatistic::Cusum => v.log_m_cs,
                    };
                    if crosses(m, log_threshold) {
                        hit = i + 1;
                        break;
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        write_out(stop, hit, "stop")?;
        write_opt(consumed, used);
        failure.map_or(Ok(()), |e| Err(e.into()))
    })
}

/// Observations consumed since creation.
#[no_mangle]
pub extern "C" fn ed_detector_steps(det: *const EdDetector, out: *mut usize) -> EdStatus {
    guard(|| {
        let det = non_null(det, "det")?;
        write_out(out, det.inner.state().steps(), "out")
    })
}

/// Current `(log M_SR, log M_CUSUM)`; both −∞ before the first observation.
#[no_mangle]
pub extern "C" fn ed_detector_statistics(
    det: *const EdDetector,
    log_m_sr: *mut f64,
    log_m_cusum: *mut f64,
) -> EdStatus {
    guard(|| {
        let det = non_null(det, "det")?;
        write_opt(log_m_sr, det.inner.state().log_m_sr());
        write_opt(log_m_cusum, det.inner.state().log_m_cs());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ed_detector_free(det: *mut EdDetector) {
    if !det.is_null() {
        // SAFETY: produced by Box::into_raw in this library and freed once
        drop(unsafe { Box::from_raw(det) });
    }
}

#[no_mangle]
pub extern "C" fn ed_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this library and freed once
        drop(unsafe { CString::from_raw(s) });
    }
}
