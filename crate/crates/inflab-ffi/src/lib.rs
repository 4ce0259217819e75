//! C interface to the inflab pipelines.
//!
//! Call [`inflab_run_config`] (or [`inflab_sweep_config`]) with a TOML run
//! configuration; on any outcome that produced a report, a handle comes back
//! for inspecting the report text, exit code, and solved field. Handles are
//! freed with [`inflab_run_free`]. Every entry point is panic-safe and
//! NULL-safe; detailed error text for the current thread is available from
//! [`inflab_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use inflab::config::{parse_config, RunConfig};
use inflab::pipeline::{render_report, run_pipeline, run_sweep, PipelineRun};

/// Status of an interface call. The first four values mirror the pipeline
/// exit codes; the rest report misuse of the interface itself.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InflabStatus {
    /// Run completed; all enabled checks passed.
    Ok = 0,
    /// Run completed but checks recorded violations (see the report).
    Violations = 1,
    /// Iteration missed its convergence gate; results are partial.
    NotConverged = 2,
    /// The configuration is invalid; `inflab_last_error` has the details.
    ConfigError = 3,
    /// A required pointer argument was NULL.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
    /// An internal invariant failed; `inflab_last_error` has the details.
    Internal = 6,
}

/// One executed run: the report document plus the solved field.
pub struct InflabRun {
    run: PipelineRun,
    report_text: CString,
    regime_text: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let clean = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).ok());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn c_text(s: String) -> CString {
    CString::new(s.replace('\0', " ")).unwrap_or_default()
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string valid for the call.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, InflabStatus> {
    if ptr.is_null() {
        set_error("NULL string argument");
        return Err(InflabStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        InflabStatus::InvalidUtf8
    })
}

fn status_of(run: &PipelineRun) -> InflabStatus {
    match run.exit_code() {
        0 => InflabStatus::Ok,
        1 => InflabStatus::Violations,
        2 => InflabStatus::NotConverged,
        _ => InflabStatus::ConfigError,
    }
}

unsafe fn execute(
    config_toml: *const c_char,
    out: *mut *mut InflabRun,
    runner: fn(&RunConfig) -> PipelineRun,
) -> InflabStatus {
    clear_error();
    if out.is_null() {
        set_error("NULL output handle");
        return InflabStatus::NullArgument;
    }
    *out = std::ptr::null_mut();
    let text = match utf8_arg(config_toml) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let config = parse_config(text).map_err(|errors| {
            errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
        })?;
        Ok::<PipelineRun, String>(runner(&config))
    }));
    match outcome {
        Ok(Ok(run)) => {
            let status = status_of(&run);
            if let Some(err) = &run.report.error {
                set_error(err.clone());
            }
            let report_text = c_text(render_report(&run.report));
            let regime = run
                .report
                .classification
                .as_ref()
                .map(|c| c.regime.clone())
                .unwrap_or_default();
            let handle = InflabRun { run, report_text, regime_text: c_text(regime) };
            *out = Box::into_raw(Box::new(handle));
            status
        }
        Ok(Err(msg)) => {
            set_error(msg);
            InflabStatus::ConfigError
        }
        Err(_) => {
            set_error("internal panic; the run state is unusable");
            InflabStatus::Internal
        }
    }
}

/// Parses `config_toml` and executes the configured solve pipeline (bounded
/// or exterior, decided by the presence of a `[farfield]` table).
///
/// Whenever a report exists — including failed runs — `*out` receives a
/// handle the caller must free with [`inflab_run_free`]; the return value is
/// the run's exit status. On parse failures `*out` stays NULL.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_config(
    config_toml: *const c_char,
    out: *mut *mut InflabRun,
) -> InflabStatus {
    execute(config_toml, out, run_pipeline)
}

/// Like [`inflab_run_config`], but runs the h-refinement sweep; the
/// configuration needs `sweep_h` and a closed-form `reference`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn inflab_sweep_config(
    config_toml: *const c_char,
    out: *mut *mut InflabRun,
) -> InflabStatus {
    execute(config_toml, out, run_sweep)
}

/// The run's exit code (0 clean, 1 violations, 2 not converged, 3 config
/// error), or -1 for a NULL handle.
///
/// # Safety
/// `run` must be NULL or a live handle from this interface.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_exit_code(run: *const InflabRun) -> i32 {
    match run.as_ref() {
        Some(r) => r.run.exit_code(),
        None => -1,
    }
}

/// The full report as NUL-terminated TOML, owned by the handle (valid until
/// [`inflab_run_free`]). NULL for a NULL handle.
///
/// # Safety
/// `run` must be NULL or a live handle from this interface.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_report(run: *const InflabRun) -> *const c_char {
    match run.as_ref() {
        Some(r) => r.report_text.as_ptr(),
        None => std::ptr::null(),
    }
}

/// The classification verdict (`bounded`, `cone_up`, `cone_down`, `plane`,
/// or `inconclusive`), an empty string when the run has no classification,
/// or NULL for a NULL handle. Owned by the handle.
///
/// # Safety
/// `run` must be NULL or a live handle from this interface.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_regime(run: *const InflabRun) -> *const c_char {
    match run.as_ref() {
        Some(r) => r.regime_text.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Number of lattice nodes in the solved field (0 when the run produced no
/// field, e.g. sweeps and early failures).
///
/// # Safety
/// `run` must be NULL or a live handle from this interface.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_node_count(run: *const InflabRun) -> usize {
    run.as_ref()
        .and_then(|r| r.run.field.as_ref())
        .map_or(0, |f| f.values.len())
}

/// Copies up to `cap` node values into `buf` in lattice order (excluded
/// nodes hold NaN) and returns the count copied.
///
/// # Safety
/// `run` must be NULL or a live handle; `buf` must point to at least `cap`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_values(
    run: *const InflabRun,
    buf: *mut f64,
    cap: usize,
) -> usize {
    let Some(field) = run.as_ref().and_then(|r| r.run.field.as_ref()) else {
        return 0;
    };
    if buf.is_null() {
        return 0;
    }
    let n = cap.min(field.values.len());
    std::ptr::copy_nonoverlapping(field.values.as_ptr(), buf, n);
    n
}

/// Detailed message for the current thread's most recent failure, or NULL.
/// Valid until the next interface call on this thread.
#[no_mangle]
pub extern "C" fn inflab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Frees a run handle. NULL is a no-op.
///
/// # Safety
/// `run` must be NULL or a live handle, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn inflab_run_free(run: *mut InflabRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn inflab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOUNDED: &str = "dim = 2\nh = 0.5\nm = 2\nouter_radius = 2.0\nouter = \"box\"\n\
                           [obstacle]\nshape = \"points\"\npoints = [[0.0, 0.0]]\n\
                           [boundary]\ng = \"x1\"\n";

    fn c(doc: &str) -> CString {
        CString::new(doc).unwrap()
    }

    #[test]
    fn run_handle_exposes_report_and_field() {
        let doc = c(BOUNDED);
        let mut handle: *mut InflabRun = std::ptr::null_mut();
        let status = unsafe { inflab_run_config(doc.as_ptr(), &mut handle) };
        assert_eq!(status, InflabStatus::Ok);
        assert!(!handle.is_null());

        unsafe {
            assert_eq!(inflab_run_exit_code(handle), 0);
            let report = CStr::from_ptr(inflab_run_report(handle)).to_str().unwrap();
            assert!(report.contains("schema = \"inflab-report/1\""));
            assert!(!CStr::from_ptr(inflab_run_regime(handle)).to_bytes().is_empty());

            let n = inflab_run_node_count(handle);
            assert!(n > 0);
            let mut buf = vec![0.0f64; n];
            assert_eq!(inflab_run_values(handle, buf.as_mut_ptr(), n), n);
            assert!(buf.iter().any(|v| v.is_finite()));

            inflab_run_free(handle);
        }
    }

    #[test]
    fn config_errors_leave_a_message_and_no_handle() {
        let doc = c("dim = 2\nh = -1.0\n");
        let mut handle: *mut InflabRun = std::ptr::null_mut();
        let status = unsafe { inflab_run_config(doc.as_ptr(), &mut handle) };
        assert_eq!(status, InflabStatus::ConfigError);
        assert!(handle.is_null());
        let msg = unsafe { CStr::from_ptr(inflab_last_error()) }.to_str().unwrap();
        assert!(msg.contains("h must be positive"), "got: {msg}");
    }

    #[test]
    fn null_arguments_are_rejected_not_crashed() {
        let mut handle: *mut InflabRun = std::ptr::null_mut();
        unsafe {
            assert_eq!(
                inflab_run_config(std::ptr::null(), &mut handle),
                InflabStatus::NullArgument
            );
            assert_eq!(
                inflab_run_config(c(BOUNDED).as_ptr(), std::ptr::null_mut()),
                InflabStatus::NullArgument
            );
            assert_eq!(inflab_run_exit_code(std::ptr::null()), -1);
            assert!(inflab_run_report(std::ptr::null()).is_null());
            assert_eq!(inflab_run_node_count(std::ptr::null()), 0);
            inflab_run_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn sweep_runs_through_the_same_interface() {
        let doc = c(
            "dim = 2\nh = 0.5\nm = 2\nouter_radius = 2.0\nouter = \"box\"\n\
             reference = \"x1\"\nsweep_h = [0.5, 0.25]\n\
             [obstacle]\nshape = \"points\"\npoints = [[0.0, 0.0]]\n\
             [boundary]\ng = \"x1\"\n",
        );
        let mut handle: *mut InflabRun = std::ptr::null_mut();
        let status = unsafe { inflab_sweep_config(doc.as_ptr(), &mut handle) };
        assert_eq!(status, InflabStatus::Ok);
        unsafe {
            let report = CStr::from_ptr(inflab_run_report(handle)).to_str().unwrap();
            assert!(report.contains("[[sweep]]"));
            assert_eq!(inflab_run_node_count(handle), 0);
            inflab_run_free(handle);
        }
    }
}
