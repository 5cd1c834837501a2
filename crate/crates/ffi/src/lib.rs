//! C ABI for the framekg engine.
//!
//! Engines are opaque handles. Every call returns an [`FkgStatus`]; on
//! failure [`fkg_last_error`] describes the error for the calling thread.
//! Structured results are returned as JSON strings owned by the caller and
//! released with [`fkg_string_free`].
//!
//! ```c
//! FkgEngine *e = NULL;
//! if (fkg_engine_new("streaming.toml", &e) != FKG_STATUS_OK) puts(fkg_last_error());
//! fkg_engine_run(e);
//! char *alerts = NULL;
//! fkg_alerts_json(e, 0, &alerts);
//! fkg_string_free(alerts);
//! fkg_engine_free(e);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::thread::JoinHandle;

use framekg::bench::{run_suite, SuiteConfigs};
use framekg::engine::{EngineHandle, RunSummary};
use framekg::{Engine, EngineError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration, knowledge base or scenario could not be loaded.
    Config = 3,
    /// Query text was rejected.
    Query = 4,
    /// The engine failed while running.
    Engine = 5,
    /// The call does not fit the engine's state, such as running twice.
    State = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// A loaded engine. Create with [`fkg_engine_new`], release with
/// [`fkg_engine_free`].
pub struct FkgEngine {
    handle: EngineHandle,
    engine: Mutex<Option<Engine>>,
    worker: Mutex<Option<JoinHandle<Result<RunSummary, EngineError>>>>,
    summary: Mutex<Option<RunSummary>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(FkgStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::Config(_) | EngineError::Kb(_) | EngineError::Scenario(_) => FkgStatus::Config,
            EngineError::Query(_) => FkgStatus::Query,
            EngineError::Io(_) => FkgStatus::Io,
            _ => FkgStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

fn state(msg: &str) -> Failure {
    Failure(FkgStatus::State, msg.into())
}

/// Runs `f`, records any failure for [`fkg_last_error`] and maps it to a
/// status. Panics never cross the boundary.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FkgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FkgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FkgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(FkgStatus::NullArgument, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(FkgStatus::InvalidUtf8, e.to_string()))
}

unsafe fn engine<'a>(p: *const FkgEngine) -> Result<&'a FkgEngine, Failure> {
    p.as_ref().ok_or_else(|| Failure(FkgStatus::NullArgument, "null engine handle".into()))
}

unsafe fn write_json(out: *mut *mut c_char, value: &impl serde::Serialize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FkgStatus::NullArgument, "null output pointer".into()));
    }
    let s = serde_json::to_string(value).map_err(|e| Failure(FkgStatus::Engine, e.to_string()))?;
    *out = CString::new(s).map_err(|e| Failure(FkgStatus::Engine, e.to_string()))?.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fkg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fkg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a TOML engine config and everything it references.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string and `out` a valid
/// pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_new(config_path: *const c_char, out: *mut *mut FkgEngine) -> FkgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FkgStatus::NullArgument, "null output pointer".into()));
        }
        let e = Engine::load(text(config_path)?)?;
        let boxed = Box::new(FkgEngine {
            handle: e.handle(),
            engine: Mutex::new(Some(e)),
            worker: Mutex::new(None),
            summary: Mutex::new(None),
        });
        *out = Box::into_raw(boxed);
        Ok(())
    })
}

fn take_engine(e: &FkgEngine) -> Result<Engine, Failure> {
    e.engine
        .lock()
        .map_err(|_| state("engine lock poisoned"))?
        .take()
        .ok_or_else(|| state("engine already started"))
}

/// Runs the scenario to completion on the calling thread.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_run(engine: *mut FkgEngine) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let summary = take_engine(e)?.run()?;
        *e.summary.lock().map_err(|_| state("lock poisoned"))? = Some(summary);
        Ok(())
    })
}

/// Starts the run on a background thread; the query calls stay usable.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_start(engine: *mut FkgEngine) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let run = take_engine(e)?;
        let worker = std::thread::Builder::new()
            .name("fkg-run".into())
            .spawn(move || run.run())
            .map_err(|err| Failure(FkgStatus::Io, err.to_string()))?;
        *e.worker.lock().map_err(|_| state("lock poisoned"))? = Some(worker);
        Ok(())
    })
}

/// Asks a running engine to stop at the next frame.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_stop(engine: *mut FkgEngine) -> FkgStatus {
    guard(|| {
        self::engine(engine)?.handle.stop();
        Ok(())
    })
}

/// Blocks until a run started with [`fkg_engine_start`] finishes.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_wait(engine: *mut FkgEngine) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let worker = e
            .worker
            .lock()
            .map_err(|_| state("lock poisoned"))?
            .take()
            .ok_or_else(|| state("no background run to wait for"))?;
        let summary = worker.join().map_err(|_| Failure(FkgStatus::Panic, "run thread panicked".into()))??;
        *e.summary.lock().map_err(|_| state("lock poisoned"))? = Some(summary);
        Ok(())
    })
}

/// Summary of the finished run as JSON.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`]; `out` receives a
/// string to release with [`fkg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fkg_summary_json(engine: *const FkgEngine, out: *mut *mut c_char) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let summary = e.summary.lock().map_err(|_| state("lock poisoned"))?;
        let s = summary.as_ref().ok_or_else(|| state("run has not finished"))?;
        write_json(out, s)
    })
}

/// Registers a query from DSL text and returns it as JSON.
///
/// # Safety
/// `engine` must be a handle from [`fkg_engine_new`], `query` a valid
/// NUL-terminated string; `out` receives a string to release with
/// [`fkg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fkg_register_query(engine: *const FkgEngine, query: *const c_char, out: *mut *mut c_char) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let q = e
            .handle
            .register_query(text(query)?)
            .map_err(|err| Failure(FkgStatus::Query, err.to_string()))?;
        write_json(out, &q)
    })
}

/// Alerts raised from position `since` onwards, as a JSON array.
///
/// # Safety
/// As for [`fkg_summary_json`].
#[no_mangle]
pub unsafe extern "C" fn fkg_alerts_json(engine: *const FkgEngine, since: usize, out: *mut *mut c_char) -> FkgStatus {
    guard(|| write_json(out, &self::engine(engine)?.handle.alerts_since(since)))
}

/// Current metrics as JSON.
///
/// # Safety
/// As for [`fkg_summary_json`].
#[no_mangle]
pub unsafe extern "C" fn fkg_metrics_json(engine: *const FkgEngine, out: *mut *mut c_char) -> FkgStatus {
    guard(|| write_json(out, &self::engine(engine)?.handle.metrics()))
}

/// Live knowledge graph as JSON; `window_ms` of 0 returns all of it.
///
/// # Safety
/// As for [`fkg_summary_json`].
#[no_mangle]
pub unsafe extern "C" fn fkg_kg_json(engine: *const FkgEngine, window_ms: u64, out: *mut *mut c_char) -> FkgStatus {
    guard(|| write_json(out, &self::engine(engine)?.handle.kg((window_ms > 0).then_some(window_ms))))
}

/// Answers an interactive question; returns `{"query": .., "answer": ..}`.
///
/// # Safety
/// As for [`fkg_register_query`].
#[no_mangle]
pub unsafe extern "C" fn fkg_interactive(engine: *const FkgEngine, question: *const c_char, out: *mut *mut c_char) -> FkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let (query, answer) = e
            .handle
            .interactive(text(question)?)
            .map_err(|err| Failure(FkgStatus::Query, err.to_string()))?;
        write_json(out, &serde_json::json!({ "query": query, "answer": answer }))
    })
}

/// Runs both configs over a scenario suite and returns the report as JSON.
///
/// # Safety
/// All strings must be valid and NUL-terminated; `out` receives a string to
/// release with [`fkg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fkg_bench(
    suite_dir: *const c_char,
    baseline_config: *const c_char,
    streaming_config: *const c_char,
    out: *mut *mut c_char,
) -> FkgStatus {
    guard(|| {
        let configs = SuiteConfigs::load(Path::new(text(baseline_config)?), Path::new(text(streaming_config)?))?;
        let report = run_suite(Path::new(text(suite_dir)?), &configs, true)?;
        write_json(out, &report)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fkg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Stops and releases an engine, waiting for a background run to end.
/// Null is ignored.
///
/// # Safety
/// `engine` must come from [`fkg_engine_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fkg_engine_free(engine: *mut FkgEngine) {
    if engine.is_null() {
        return;
    }
    let e = Box::from_raw(engine);
    e.handle.stop();
    let _ = catch_unwind(AssertUnwindSafe(|| {
        if let Some(w) = e.worker.lock().ok().and_then(|mut w| w.take()) {
            let _ = w.join();
        }
    }));
}
