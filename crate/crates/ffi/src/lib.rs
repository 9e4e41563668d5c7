//! C ABI over the qsuggest engine.
//!
//! Every function returns a [`QsStatus`]. On failure the message is kept per
//! thread and can be read with [`qs_last_error_message`]. Strings returned
//! through out-pointers are owned by the caller and must be released with
//! [`qs_string_free`]. Engine handles are thread safe.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qsuggest::config::Config;
use qsuggest::domain::{dot, WorkflowTrace};
use qsuggest::engine::{Engine, EngineError, EngineOptions};

/// Result code of every `qs_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsStatus {
    Ok = 0,
    InvalidArgument = 1,
    NotFound = 2,
    Provider = 3,
    Io = 4,
    Generation = 5,
    Internal = 6,
}

/// Opaque engine handle.
pub struct QsEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(QsStatus, String);

impl From<EngineError> for Fail {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownAgent(_) => QsStatus::NotFound,
            EngineError::Validation(_) | EngineError::Config(_) => QsStatus::InvalidArgument,
            EngineError::Provider { .. } | EngineError::ModelOutput(_) => QsStatus::Provider,
            EngineError::Generation(_) => QsStatus::Generation,
            EngineError::Store(_) | EngineError::Setup(_) => QsStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(QsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QsStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

fn to_c(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(QsStatus::Internal, "output contains a NUL byte".into()))
}

/// Opens an engine from a TOML config file. `store_dir` may be null to use
/// the configured store location.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_engine_open(
    config_path: *const c_char,
    store_dir: *const c_char,
    out: *mut *mut QsEngine,
) -> QsStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("`out` is null"));
        }
        *out = ptr::null_mut();
        let path = str_arg(config_path, "config_path")?;
        let store_dir = if store_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(store_dir, "store_dir")?))
        };
        let cfg = Config::load(path).map_err(|e| Fail::from(EngineError::from(e)))?;
        let engine = Engine::from_config(
            &cfg,
            &EngineOptions {
                provider: None,
                store_dir,
            },
        )?;
        *out = Box::into_raw(Box::new(QsEngine { engine }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`qs_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qs_engine_free(engine: *mut QsEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

unsafe fn engine_and_trace<'a>(
    engine: *const QsEngine,
    trace_json: *const c_char,
    out_json: *mut *mut c_char,
) -> Result<(&'a Engine, WorkflowTrace), Fail> {
    if out_json.is_null() {
        return Err(invalid("`out_json` is null"));
    }
    *out_json = ptr::null_mut();
    let engine = engine.as_ref().ok_or_else(|| invalid("`engine` is null"))?;
    let text = str_arg(trace_json, "trace_json")?;
    let trace = serde_json::from_str(text).map_err(|e| invalid(format!("invalid trace: {e}")))?;
    Ok((&engine.engine, trace))
}

/// Labels a trace, learns from it and writes the outcome as JSON to
/// `out_json`. `num_suggestions` of 0 selects the configured default.
///
/// # Safety
/// `engine` must be a live handle, `trace_json` NUL-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qs_suggest(
    engine: *const QsEngine,
    trace_json: *const c_char,
    num_suggestions: u32,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let (engine, trace) = engine_and_trace(engine, trace_json, out_json)?;
        let n = (num_suggestions > 0).then_some(num_suggestions as usize);
        let outcome = engine.process(&trace, n, false)?;
        *out_json = to_c(serde_json::to_string(&outcome).map_err(|e| Fail(QsStatus::Internal, e.to_string()))?)?;
        Ok(())
    })
}

/// Labels and stores a trace without suggesting; writes the verdict as JSON.
///
/// # Safety
/// Same as [`qs_suggest`].
#[no_mangle]
pub unsafe extern "C" fn qs_ingest(
    engine: *const QsEngine,
    trace_json: *const c_char,
    out_json: *mut *mut c_char,
) -> QsStatus {
    guard(|| {
        let (engine, trace) = engine_and_trace(engine, trace_json, out_json)?;
        let summary = engine.ingest(&trace)?;
        *out_json = to_c(serde_json::to_string(&summary).map_err(|e| Fail(QsStatus::Internal, e.to_string()))?)?;
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qs_cosine_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> QsStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        if len == 0 {
            return Err(invalid("vectors are empty"));
        }
        let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
        let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
        if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
            return Err(invalid("vectors must be finite and non-zero"));
        }
        *out = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `qs_*` call on the same thread.
#[no_mangle]
pub extern "C" fn qs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
