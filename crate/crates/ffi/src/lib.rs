//! C ABI over `levy-storage`.
//!
//! Objects are opaque handles created by `*_from_*` functions and released
//! with the matching `*_free`. Every fallible call returns an [`LsStatus`];
//! on failure [`ls_last_error_message`] describes the error for the calling
//! thread. Strings returned to the caller are released with
//! [`ls_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use levy_storage::config::{fixture, ConfigFile, Overrides};
use levy_storage::exponents::{compensator_rate, mean_vector, phi, psi};
use levy_storage::verify::{run_experiment, Experiment, MCReport, RunOptions};
use levy_storage::{Error, LevyModel};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed argument (wrong length, non-finite value).
    Input = 3,
    /// Argument outside the domain of the operation.
    Precondition = 4,
    /// Invalid model or unsupported model feature.
    Model = 5,
    /// Invalid configuration or JSON.
    Config = 6,
    Io = 7,
    Internal = 8,
    Panic = 9,
}

/// Lévy model handle.
pub struct LsModel(LevyModel);

/// Experiment handle.
pub struct LsExperiment(Experiment);

/// Monte Carlo report handle.
pub struct LsReport(MCReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::Input(_) => LsStatus::Input,
        Error::Precondition(_) => LsStatus::Precondition,
        Error::Model(_) | Error::UnsupportedModel(_) => LsStatus::Model,
        Error::Config(_) | Error::Json(_) => LsStatus::Config,
        Error::Io(_) => LsStatus::Io,
        Error::Internal(_) => LsStatus::Internal,
    }
}

struct Fail(LsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_model_from_json(json: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let model: LevyModel =
            serde_json::from_str(text).map_err(|e| Fail(LsStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(LsModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ls_model_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_model_dim(model: *const LsModel, out: *mut usize) -> LsStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.0.dim();
        Ok(())
    })
}

/// Laplace exponent `log E exp(-alpha'X(1))`.
///
/// # Safety
/// `alpha` must point to `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_model_phi(model: *const LsModel, alpha: *const f64, len: usize, out: *mut f64) -> LsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        *out_arg(out, "out")? = phi(&m.0, slice_arg(alpha, len, "alpha")?)?;
        Ok(())
    })
}

/// Characteristic exponent `log E exp(i alpha'X(1))` as real and imaginary parts.
///
/// # Safety
/// `alpha` must point to `len` doubles; `re` and `im` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_model_psi(
    model: *const LsModel,
    alpha: *const f64,
    len: usize,
    re: *mut f64,
    im: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let (re, im) = (out_arg(re, "re")?, out_arg(im, "im")?);
        let v = psi(&m.0, slice_arg(alpha, len, "alpha")?)?;
        *re = v.re;
        *im = v.im;
        Ok(())
    })
}

/// Writes `E X(1)` into `out`, which must hold `len == dim` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_model_mean(model: *const LsModel, out: *mut f64, len: usize) -> LsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let mean = mean_vector(&m.0)?;
        if len != mean.len() {
            return Err(Fail(LsStatus::Input, format!("buffer holds {len} values, model dimension is {}", mean.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&mean);
        Ok(())
    })
}

/// Compensator rate `phi(2i) - 2 phi(i)` for the integrand value `i`.
///
/// # Safety
/// `i_vec` must point to `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_model_compensator_rate(
    model: *const LsModel,
    i_vec: *const f64,
    len: usize,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        *out_arg(out, "out")? = compensator_rate(&m.0, slice_arg(i_vec, len, "i_vec")?)?;
        Ok(())
    })
}

fn experiment_from(config: ConfigFile) -> Result<Box<LsExperiment>, Fail> {
    Ok(Box::new(LsExperiment(config.to_experiment(&Overrides::default())?)))
}

/// Builds an experiment from a JSON config, as accepted by the CLI.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_from_json(json: *const c_char, out: *mut *mut LsExperiment) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let exp = experiment_from(ConfigFile::from_json(str_arg(json, "json")?)?)?;
        *out = Box::into_raw(exp);
        Ok(())
    })
}

/// Builds an experiment from a bundled fixture.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_from_fixture(name: *const c_char, out: *mut *mut LsExperiment) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let exp = experiment_from(fixture(str_arg(name, "name")?)?.config()?)?;
        *out = Box::into_raw(exp);
        Ok(())
    })
}

/// Changes the number of replications (at least 2; otherwise `Config`).
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_set_replications(exp: *mut LsExperiment, replications: usize) -> LsStatus {
    guard(|| {
        let e = exp.as_mut().ok_or_else(|| null("experiment"))?;
        let mut next = e.0.clone();
        next.replications = replications;
        next.validate()?;
        e.0 = next;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_set_seed(exp: *mut LsExperiment, seed: u64) -> LsStatus {
    guard(|| {
        exp.as_mut().ok_or_else(|| null("experiment"))?.0.base_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_free(exp: *mut LsExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Runs the experiment. `threads == 0` uses the available parallelism.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_experiment_run(
    exp: *const LsExperiment,
    threads: usize,
    deterministic_reduce: bool,
    out: *mut *mut LsReport,
) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let e = ref_arg(exp, "experiment")?;
        let opts = RunOptions {
            threads: (threads > 0).then_some(threads),
            deterministic_reduce,
        };
        let report = run_experiment(&e.0, &opts)?;
        *out = Box::into_raw(Box::new(LsReport(report)));
        Ok(())
    })
}

/// Global verdict of a report.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_report_passed(report: *const LsReport, out: *mut bool) -> LsStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(report, "report")?.0.passed();
        Ok(())
    })
}

/// Report as CSV (no timestamp line). Free with [`ls_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_report_csv(report: *const LsReport, out: *mut *mut c_char) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let mut buf = Vec::new();
        ref_arg(report, "report")?.0.write_csv(&mut buf, None)?;
        let text = String::from_utf8(buf).map_err(|e| Fail(LsStatus::Internal, e.to_string()))?;
        *out = into_c_string(text);
        Ok(())
    })
}

/// Human-readable summary. Free with [`ls_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_report_summary(report: *const LsReport, out: *mut *mut c_char) -> LsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(ref_arg(report, "report")?.0.summary());
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_report_free(report: *mut LsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
