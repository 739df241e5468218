//! C interface to the estimation toolkit.
//!
//! Every entry point returns an [`OemStatus`]; results come back through out
//! pointers. Configurations, experiments and estimation reports live behind
//! opaque handles that the caller releases with the matching `*_free`
//! function. On failure the message of the most recent error on the calling
//! thread is available from [`oem_last_error`].
//!
//! The generated header is `include/oemcoll.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use oemcoll::config::RunConfig;
use oemcoll::csvio::{load_csv, write_experiment};
use oemcoll::estimate::{run_estimate, simulate_from_config, write_report, EstimateReport};
use oemcoll::model::ExperimentData;
use oemcoll::Error;

/// Status codes. Zero is success; the rest mirror the library error kinds
/// plus a few that only arise at the boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    IndexOutOfRange = 3,
    BufferTooSmall = 4,
    Domain = 10,
    Dimension = 11,
    OutOfRange = 12,
    MeshAlignment = 13,
    Evaluation = 14,
    Divergence = 15,
    RankDeficient = 16,
    FiniteDifference = 17,
    Config = 18,
    Parse = 19,
    Io = 20,
    Panic = 99,
}

impl From<&Error> for OemStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::Domain(_) => OemStatus::Domain,
            Error::Dimension(_) => OemStatus::Dimension,
            Error::OutOfRange { .. } => OemStatus::OutOfRange,
            Error::MeshAlignment { .. } => OemStatus::MeshAlignment,
            Error::Evaluation { .. } => OemStatus::Evaluation,
            Error::Divergence { .. } => OemStatus::Divergence,
            Error::RankDeficient { .. } => OemStatus::RankDeficient,
            Error::FiniteDifference { .. } => OemStatus::FiniteDifference,
            Error::Config(_) => OemStatus::Config,
            Error::Parse { .. } => OemStatus::Parse,
            Error::Io(_) => OemStatus::Io,
            Error::Stage { .. } => unreachable!("root strips stages"),
        }
    }
}

/// Run configuration handle.
pub struct OemConfig(RunConfig);

/// Experiment (time grid, outputs, inputs) handle.
pub struct OemData(ExperimentData);

/// Estimation result handle.
pub struct OemReport(EstimateReport);

struct Failure(OemStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(OemStatus::from(&e), e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OemStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            OemStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OemStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(OemStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = borrow_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if none has
/// failed. The pointer stays valid until the next failing call on the same
/// thread.
#[no_mangle]
pub extern "C" fn oem_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML run configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_config_from_toml(text: *const c_char, out: *mut *mut OemConfig) -> OemStatus {
    guard(|| {
        let cfg = RunConfig::from_toml_str(string(text, "text")?)?;
        cfg.validate()?;
        put(out, OemConfig(cfg))
    })
}

/// Reads and validates a TOML run configuration from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_config_from_file(path: *const c_char, out: *mut *mut OemConfig) -> OemStatus {
    guard(|| {
        let cfg = RunConfig::from_path(&PathBuf::from(string(path, "path")?))?;
        cfg.validate()?;
        put(out, OemConfig(cfg))
    })
}

/// Replaces the transcription (`collocation`, `single-shooting` or
/// `multiple-shooting`). The configuration is left unchanged on failure.
///
/// # Safety
/// `config` must come from `oem_config_from_*`; `kind` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oem_config_set_transcription(config: *mut OemConfig, kind: *const c_char) -> OemStatus {
    guard(|| {
        let cfg = borrow_mut(config, "config")?;
        let mut next = cfg.0.clone();
        next.transcription.kind = string(kind, "kind")?.to_string();
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Replaces the random seed.
///
/// # Safety
/// `config` must come from `oem_config_from_*`.
#[no_mangle]
pub unsafe extern "C" fn oem_config_set_seed(config: *mut OemConfig, seed: u64) -> OemStatus {
    guard(|| {
        borrow_mut(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must come from `oem_config_from_*` or be null.
#[no_mangle]
pub unsafe extern "C" fn oem_config_free(config: *mut OemConfig) {
    release(config)
}

/// Loads a CSV experiment with the channels named in the configuration.
///
/// # Safety
/// `config` must be a live handle, `path` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_data_load_csv(
    config: *const OemConfig,
    path: *const c_char,
    out: *mut *mut OemData,
) -> OemStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.0;
        let path = PathBuf::from(string(path, "path")?);
        let model = cfg.build_model()?;
        let data = load_csv(&path, &cfg.output_channels(model.as_ref()), &cfg.input_channels(model.as_ref()))?;
        put(out, OemData(data))
    })
}

/// Generates a synthetic experiment from the `[simulate]` section.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_data_simulate(config: *const OemConfig, seed: u64, out: *mut *mut OemData) -> OemStatus {
    guard(|| {
        let data = simulate_from_config(&borrow(config, "config")?.0, seed)?;
        put(out, OemData(data))
    })
}

/// Number of samples.
///
/// # Safety
/// `data` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_data_len(data: *const OemData, out: *mut usize) -> OemStatus {
    guard(|| {
        *borrow_mut(out, "out")? = borrow(data, "data")?.0.len();
        Ok(())
    })
}

/// Writes the experiment as CSV.
///
/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oem_data_write_csv(data: *const OemData, path: *const c_char) -> OemStatus {
    guard(|| {
        let data = &borrow(data, "data")?.0;
        write_experiment(&PathBuf::from(string(path, "path")?), data)?;
        Ok(())
    })
}

/// # Safety
/// `data` must come from `oem_data_*` or be null.
#[no_mangle]
pub unsafe extern "C" fn oem_data_free(data: *mut OemData) {
    release(data)
}

/// Runs the configured estimation. A solver that stops without converging
/// still yields a report with `OEM_STATUS_OK`; check
/// [`oem_report_converged`].
///
/// # Safety
/// `config` and `data` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_estimate(
    config: *const OemConfig,
    data: *const OemData,
    out: *mut *mut OemReport,
) -> OemStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.0;
        let data = &borrow(data, "data")?.0;
        put(out, OemReport(run_estimate(cfg, data)?))
    })
}

/// Writes 1 to `out` if the solver converged, 0 otherwise.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_report_converged(report: *const OemReport, out: *mut i32) -> OemStatus {
    guard(|| {
        *borrow_mut(out, "out")? = i32::from(borrow(report, "report")?.0.converged());
        Ok(())
    })
}

/// Final objective (negative log-likelihood up to a constant).
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_report_objective(report: *const OemReport, out: *mut f64) -> OemStatus {
    guard(|| {
        *borrow_mut(out, "out")? = borrow(report, "report")?.0.objective;
        Ok(())
    })
}

/// Number of SQP iterations taken.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_report_iterations(report: *const OemReport, out: *mut usize) -> OemStatus {
    guard(|| {
        *borrow_mut(out, "out")? = borrow(report, "report")?.0.iterations.len();
        Ok(())
    })
}

/// Number of estimated parameters (model parameters followed by noise
/// parameters).
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oem_report_num_params(report: *const OemReport, out: *mut usize) -> OemStatus {
    guard(|| {
        *borrow_mut(out, "out")? = borrow(report, "report")?.0.theta.len();
        Ok(())
    })
}

/// Estimate and standard error of parameter `index`. The standard error is
/// NaN when the covariance could not be formed. Either out pointer may be
/// null.
///
/// # Safety
/// `report` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn oem_report_param(
    report: *const OemReport,
    index: usize,
    value: *mut f64,
    std_error: *mut f64,
) -> OemStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let v = *r.theta.get(index).ok_or_else(|| out_of_range(index, r.theta.len()))?;
        if let Some(slot) = value.as_mut() {
            *slot = v;
        }
        if let Some(slot) = std_error.as_mut() {
            *slot = r.std_error.as_ref().and_then(|s| s.get(index).copied()).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Copies the name of parameter `index` into `buf` as a NUL-terminated
/// string. `needed` (if non-null) receives the required size including the
/// terminator; when `capacity` is smaller nothing is copied and
/// `OEM_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `report` must be a live handle; `buf` must hold `capacity` bytes (it may
/// be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn oem_report_param_name(
    report: *const OemReport,
    index: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> OemStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let name = r.names.get(index).ok_or_else(|| out_of_range(index, r.names.len()))?;
        let size = name.len() + 1;
        if let Some(slot) = needed.as_mut() {
            *slot = size;
        }
        if capacity < size {
            return Err(Failure(OemStatus::BufferTooSmall, format!("name needs {size} bytes, buffer has {capacity}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(name.as_ptr().cast::<c_char>(), buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Writes the result file, trajectory and iteration log into `dir`.
///
/// # Safety
/// `report` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oem_report_write(report: *const OemReport, dir: *const c_char) -> OemStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        write_report(r, &PathBuf::from(string(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `report` must come from `oem_estimate` or be null.
#[no_mangle]
pub unsafe extern "C" fn oem_report_free(report: *mut OemReport) {
    release(report)
}

fn out_of_range(index: usize, len: usize) -> Failure {
    Failure(OemStatus::IndexOutOfRange, format!("index {index} out of range for {len} parameters"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_wrapping_maps_to_root_kind() {
        let e = Error::Parse { row: 3, message: "x".into() }.at_stage("data").at_stage("load");
        assert_eq!(OemStatus::from(&e), OemStatus::Parse);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, OemStatus::Panic);
        let msg = unsafe { CStr::from_ptr(oem_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn null_out_pointer_is_reported() {
        let text = CString::new("garbage = [").unwrap();
        let s = unsafe { oem_config_from_toml(text.as_ptr(), std::ptr::null_mut()) };
        assert_ne!(s, OemStatus::Ok);
        let s = unsafe { oem_data_len(std::ptr::null(), std::ptr::null_mut()) };
        assert_eq!(s, OemStatus::NullPointer);
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(oem_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
