//! C interface to the portauthz engine.
//!
//! Every entry point is fail closed: anything other than `PORTAUTHZ_ALLOW`
//! must be treated as a denial by the caller. Strings handed out by the
//! library are owned by the caller and released with `portauthz_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use portauthz::canonical;
use portauthz::config::{build_engine, EngineSpec, RequestFile};
use portauthz::pipeline::Engine;

/// Result of a call. Only `PORTAUTHZ_ALLOW` grants anything.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortauthzStatus {
    /// Success; for an evaluation, the request was allowed.
    PORTAUTHZ_ALLOW = 0,
    /// The request was evaluated and denied. The result JSON says why.
    PORTAUTHZ_DENY = 1,
    PORTAUTHZ_NULL_ARGUMENT = 2,
    PORTAUTHZ_INVALID_UTF8 = 3,
    PORTAUTHZ_INVALID_CONFIG = 4,
    PORTAUTHZ_INVALID_REQUEST = 5,
    /// An internal panic was caught at the boundary.
    PORTAUTHZ_INTERNAL = 6,
}

use PortauthzStatus::*;

/// Opaque engine handle.
pub struct PortauthzEngine {
    engine: Engine,
    base: PathBuf,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: PortauthzStatus, message: impl Into<String>) -> PortauthzStatus {
    set_error(message);
    status
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, PortauthzStatus> {
    if p.is_null() {
        return Err(fail(PORTAUTHZ_NULL_ARGUMENT, "null argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PORTAUTHZ_INVALID_UTF8, "argument is not UTF-8"))
}

fn guarded(f: impl FnOnce() -> PortauthzStatus) -> PortauthzStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PORTAUTHZ_INTERNAL, "internal panic"))
}

fn new_engine(spec_json: &str, base: &Path) -> Result<Box<PortauthzEngine>, PortauthzStatus> {
    let spec: EngineSpec =
        canonical::from_bytes(spec_json.as_bytes()).map_err(|e| fail(PORTAUTHZ_INVALID_CONFIG, e.to_string()))?;
    let built = build_engine(&spec, base).map_err(|e| fail(PORTAUTHZ_INVALID_CONFIG, e.to_string()))?;
    Ok(Box::new(PortauthzEngine {
        engine: built.engine,
        base: base.to_path_buf(),
    }))
}

/// Builds an engine from configuration JSON. Relative artifact paths are
/// resolved against `base_dir`, which may be null for the working directory.
///
/// # Safety
/// `config_json` and `base_dir` must be null or NUL-terminated strings and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn portauthz_engine_new(
    config_json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut PortauthzEngine,
) -> PortauthzStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PORTAUTHZ_NULL_ARGUMENT, "null output pointer");
        }
        *out = ptr::null_mut();
        let json = match text(config_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            PathBuf::new()
        } else {
            match text(base_dir) {
                Ok(s) => PathBuf::from(s),
                Err(s) => return s,
            }
        };
        match new_engine(json, &base) {
            Ok(e) => {
                *out = Box::into_raw(e);
                PORTAUTHZ_ALLOW
            }
            Err(s) => s,
        }
    })
}

/// Builds an engine from a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn portauthz_engine_from_file(path: *const c_char, out: *mut *mut PortauthzEngine) -> PortauthzStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PORTAUTHZ_NULL_ARGUMENT, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match text(path) {
            Ok(s) => Path::new(s),
            Err(s) => return s,
        };
        let json = match std::fs::read_to_string(path) {
            Ok(j) => j,
            Err(e) => return fail(PORTAUTHZ_INVALID_CONFIG, format!("{}: {e}", path.display())),
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        match new_engine(&json, &base) {
            Ok(e) => {
                *out = Box::into_raw(e);
                PORTAUTHZ_ALLOW
            }
            Err(s) => s,
        }
    })
}

/// Evaluates one request (credentials root first, presenter_id, pop,
/// vouchers, context). On `ALLOW` or `DENY` `*result_json` receives the
/// decision, audit record and any successor voucher.
///
/// # Safety
/// `engine` must come from this library and not be freed, `request_json`
/// must be NUL-terminated and `result_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn portauthz_evaluate(
    engine: *const PortauthzEngine,
    request_json: *const c_char,
    result_json: *mut *mut c_char,
) -> PortauthzStatus {
    guarded(|| {
        if result_json.is_null() || engine.is_null() {
            return fail(PORTAUTHZ_NULL_ARGUMENT, "null argument");
        }
        *result_json = ptr::null_mut();
        let handle = &*engine;
        let json = match text(request_json) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let request: RequestFile = match canonical::from_bytes(json.as_bytes()) {
            Ok(r) => r,
            Err(e) => return fail(PORTAUTHZ_INVALID_REQUEST, e.to_string()),
        };
        let evaluation = match request.evaluate(&handle.engine, &handle.base) {
            Ok(e) => e,
            Err(e) => return fail(PORTAUTHZ_INVALID_REQUEST, e.to_string()),
        };
        let out = CString::new(canonical::to_string(&evaluation.to_json())).expect("canonical JSON has no NUL");
        *result_json = out.into_raw();
        if evaluation.decision.is_allow() {
            PORTAUTHZ_ALLOW
        } else {
            PORTAUTHZ_DENY
        }
    })
}

/// Overrides the evaluation clock (RFC 3339), or restores the system clock
/// when `now` is null.
///
/// # Safety
/// `engine` must come from this library; `now` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn portauthz_engine_set_now(engine: *const PortauthzEngine, now: *const c_char) -> PortauthzStatus {
    guarded(|| {
        if engine.is_null() {
            return fail(PORTAUTHZ_NULL_ARGUMENT, "null engine");
        }
        if now.is_null() {
            (*engine).engine.set_now(None);
            return PORTAUTHZ_ALLOW;
        }
        let parsed = match text(now).map(str::parse) {
            Ok(Ok(t)) => t,
            Ok(Err(_)) => return fail(PORTAUTHZ_INVALID_REQUEST, "invalid timestamp"),
            Err(s) => return s,
        };
        (*engine).engine.set_now(Some(parsed));
        PORTAUTHZ_ALLOW
    })
}

/// # Safety
/// `engine` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn portauthz_engine_free(engine: *mut PortauthzEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn portauthz_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn portauthz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn portauthz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
