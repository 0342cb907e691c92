//! C ABI over the `svidr` fitting pipeline.
//!
//! A fit is created from a TOML configuration and CSV text, exposed through
//! an opaque `SvidrFit` handle and released with `svidr_fit_free`. Every
//! entry point returns a `SvidrStatus`; the message of the most recent
//! failure on the calling thread is available from
//! `svidr_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use svidr::cli::artifact::PosteriorArtifact;
use svidr::cli::CliError;
use svidr::data::Dataset;
use svidr::inference::{fit, FitConfig, FitResult};
use svidr::model::{Model, ModelSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvidrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque fitted model.
pub struct SvidrFit {
    labels: Vec<String>,
    tau_labels: Vec<String>,
    tau: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    elbo_trace: Vec<f64>,
    posterior_json: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FfiConfig {
    model: ModelSpec,
    fit: FitConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
        e.push(0);
    });
}

fn fail(status: SvidrStatus, msg: impl AsRef<str>) -> SvidrStatus {
    set_error(msg.as_ref());
    status
}

fn cli_status(e: CliError) -> SvidrStatus {
    let status = match e {
        CliError::Config(_) => SvidrStatus::Config,
        CliError::Data(_) => SvidrStatus::Data,
        CliError::Numerical(_) | CliError::Output(_) => SvidrStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SvidrStatus) -> SvidrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SvidrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SvidrStatus> {
    if p.is_null() {
        return Err(fail(SvidrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(SvidrStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Copies `bytes` plus a terminating NUL into `buf` when it fits.
unsafe fn write_bytes(bytes: &[u8], buf: *mut c_char, cap: usize, needed: *mut usize) -> SvidrStatus {
    let n = bytes.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || cap < n {
        return fail(SvidrStatus::BufferTooSmall, format!("buffer holds {cap} bytes, {n} needed"));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    SvidrStatus::Ok
}

unsafe fn write_f64s(values: &[f64], out: *mut f64, len: usize) -> SvidrStatus {
    if out.is_null() {
        return fail(SvidrStatus::NullPointer, "output array is null");
    }
    if len < values.len() {
        return fail(SvidrStatus::BufferTooSmall, format!("array holds {len} values, {} needed", values.len()));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    SvidrStatus::Ok
}

unsafe fn handle<'a>(h: *const SvidrFit) -> Result<&'a SvidrFit, SvidrStatus> {
    h.as_ref().ok_or_else(|| fail(SvidrStatus::NullPointer, "fit handle is null"))
}

fn build(config_toml: &str, csv_text: &str) -> Result<SvidrFit, SvidrStatus> {
    let cfg: FfiConfig =
        toml::from_str(config_toml).map_err(|e| fail(SvidrStatus::Config, format!("configuration: {e}")))?;
    cfg.model.validate().map_err(|e| fail(SvidrStatus::Config, format!("model: {e}")))?;
    let data = Dataset::read_csv(csv_text.as_bytes()).map_err(|e| fail(SvidrStatus::Data, e.to_string()))?;
    let model = Model::new(&cfg.model, &data).map_err(|e| cli_status(e.into()))?;
    cfg.fit.validate(&model).map_err(|e| cli_status(e.into()))?;
    let result: FitResult = fit(&model, &cfg.fit).map_err(|e| cli_status(e.into()))?;
    let artifact = PosteriorArtifact::from_fit(&model, &result, cfg.fit.variant_name());
    let posterior_json =
        serde_json::to_string(&artifact).map_err(|e| fail(SvidrStatus::Numerical, format!("posterior: {e}")))?;
    Ok(SvidrFit {
        labels: model.design.coefficient_labels(),
        tau_labels: model.design.tau_labels(),
        tau: result.tau.location().to_vec(),
        sd: result.posterior.marginal_sd(),
        mean: result.posterior.mean,
        elbo_trace: result.elbo_trace,
        posterior_json,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn svidr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn svidr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        if e.is_empty() {
            e.push(0);
        }
        e.as_ptr().cast()
    })
}

/// Fits the model described by `config_toml` (with `[model]` and `[fit]`
/// tables) to `csv_text` and stores a new handle in `*out`.
///
/// # Safety
/// `config_toml` and `csv_text` must be NUL-terminated strings and `out` a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_from_toml(
    config_toml: *const c_char,
    csv_text: *const c_char,
    out: *mut *mut SvidrFit,
) -> SvidrStatus {
    guard(|| {
        if out.is_null() {
            return fail(SvidrStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let config = match read_str(config_toml, "config_toml") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let csv = match read_str(csv_text, "csv_text") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match build(config, csv) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(f));
                SvidrStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle from `svidr_fit_from_toml` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_free(fit: *mut SvidrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_num_coefficients(fit: *const SvidrFit, out: *mut usize) -> SvidrStatus {
    guard(|| {
        let f = match handle(fit) {
            Ok(f) => f,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(SvidrStatus::NullPointer, "out is null");
        }
        *out = f.mean.len();
        SvidrStatus::Ok
    })
}

/// Posterior means of the coefficients into `out[0..len]`.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_mean(fit: *const SvidrFit, out: *mut f64, len: usize) -> SvidrStatus {
    guard(|| match handle(fit) {
        Ok(f) => write_f64s(&f.mean, out, len),
        Err(s) => s,
    })
}

/// Posterior marginal standard deviations of the coefficients.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_sd(fit: *const SvidrFit, out: *mut f64, len: usize) -> SvidrStatus {
    guard(|| match handle(fit) {
        Ok(f) => write_f64s(&f.sd, out, len),
        Err(s) => s,
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_num_tau(fit: *const SvidrFit, out: *mut usize) -> SvidrStatus {
    guard(|| {
        let f = match handle(fit) {
            Ok(f) => f,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(SvidrStatus::NullPointer, "out is null");
        }
        *out = f.tau.len();
        SvidrStatus::Ok
    })
}

/// Central estimates of the log smoothing variances.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_tau(fit: *const SvidrFit, out: *mut f64, len: usize) -> SvidrStatus {
    guard(|| match handle(fit) {
        Ok(f) => write_f64s(&f.tau, out, len),
        Err(s) => s,
    })
}

/// Number of recorded ELBO estimates, one per epoch.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_num_epochs(fit: *const SvidrFit, out: *mut usize) -> SvidrStatus {
    guard(|| {
        let f = match handle(fit) {
            Ok(f) => f,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(SvidrStatus::NullPointer, "out is null");
        }
        *out = f.elbo_trace.len();
        SvidrStatus::Ok
    })
}

/// Per-epoch ELBO estimates; non-finite epochs are NaN.
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_elbo_trace(fit: *const SvidrFit, out: *mut f64, len: usize) -> SvidrStatus {
    guard(|| match handle(fit) {
        Ok(f) => write_f64s(&f.elbo_trace, out, len),
        Err(s) => s,
    })
}

/// Label of coefficient `index` as a NUL-terminated string in `buf`. The
/// required size including the NUL is stored in `*needed` when non-null,
/// also when the buffer is too small.
///
/// # Safety
/// `fit` must be a live handle, `buf` null or `cap` writable bytes, and
/// `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_label(
    fit: *const SvidrFit,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SvidrStatus {
    guard(|| {
        let f = match handle(fit) {
            Ok(f) => f,
            Err(s) => return s,
        };
        match f.labels.get(index) {
            Some(l) => write_bytes(l.as_bytes(), buf, cap, needed),
            None => fail(SvidrStatus::OutOfRange, format!("coefficient {index} of {}", f.labels.len())),
        }
    })
}

/// Label of smoothing variance `index`, with the buffer protocol of
/// `svidr_fit_label`.
///
/// # Safety
/// As for `svidr_fit_label`.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_tau_label(
    fit: *const SvidrFit,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SvidrStatus {
    guard(|| {
        let f = match handle(fit) {
            Ok(f) => f,
            Err(s) => return s,
        };
        match f.tau_labels.get(index) {
            Some(l) => write_bytes(l.as_bytes(), buf, cap, needed),
            None => fail(SvidrStatus::OutOfRange, format!("smoothing variance {index} of {}", f.tau_labels.len())),
        }
    })
}

/// Posterior artifact as compact JSON, with the buffer protocol of
/// `svidr_fit_label`.
///
/// # Safety
/// As for `svidr_fit_label`.
#[no_mangle]
pub unsafe extern "C" fn svidr_fit_posterior_json(
    fit: *const SvidrFit,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SvidrStatus {
    guard(|| match handle(fit) {
        Ok(f) => write_bytes(f.posterior_json.as_bytes(), buf, cap, needed),
        Err(s) => s,
    })
}
