//! C ABI for the simulator and trace checker.
//!
//! Objects cross the boundary as opaque handles (`ShbConfig`, `ShbRun`) that the
//! caller releases with the matching `*_free` function. Every fallible call returns
//! a [`ShbStatus`]; on failure, [`shb_last_error`] describes the most recent error
//! on the calling thread. Panics never unwind into C: they become
//! `SHB_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slim_hbbft::harness::{baseline_bytes, check_lemmas, run_and_check, RunOptions, RunRecord};
use slim_hbbft::sim::{AdversaryProfile, SchedulerPolicy, Trace, TraceError};

/// Result of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShbStatus {
    Ok = 0,
    /// The run or trace violated a checked property.
    Violation = 1,
    /// Parameters were rejected.
    InvalidParams = 2,
    NullPointer = 3,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 4,
    /// A file could not be read or written.
    Io = 5,
    /// A trace file could not be parsed.
    MalformedTrace = 6,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 7,
    /// A bug: a Rust panic was caught at the boundary.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: ShbStatus, msg: impl Into<String>) -> ShbStatus {
    set_error(msg);
    status
}

/// Runs `body`, converting panics into `Internal`.
fn guard(body: impl FnOnce() -> ShbStatus) -> ShbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(ShbStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, ShbStatus> {
    if s.is_null() {
        return Err(fail(ShbStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(ShbStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Run configuration under construction.
pub struct ShbConfig {
    opts: RunOptions,
}

/// A finished, checked run.
pub struct ShbRun {
    record: RunRecord,
}

/// Message describing the last failed call on this thread, or null. Valid until
/// the next API call on the same thread.
#[no_mangle]
pub extern "C" fn shb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration with `n = 3f + 1` parties and defaults for everything
/// else (committee size `f + 1`, one request per batch, K = 32, honest parties,
/// fair scheduling).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn shb_config_new(
    n: usize,
    f: usize,
    seed: u64,
    epochs: u32,
    out: *mut *mut ShbConfig,
) -> ShbStatus {
    guard(|| {
        if out.is_null() {
            return fail(ShbStatus::NullPointer, "null output handle");
        }
        let opts = RunOptions {
            n,
            f,
            seed,
            epochs,
            ..RunOptions::default()
        };
        if let Err(e) = opts.to_config() {
            return fail(ShbStatus::InvalidParams, e.to_string());
        }
        *out = Box::into_raw(Box::new(ShbConfig { opts }));
        ShbStatus::Ok
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must be null or a handle from [`shb_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shb_config_free(config: *mut ShbConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Applies `edit` and keeps it only if the result validates.
///
/// # Safety
/// `config` must be null or a live handle.
unsafe fn edit_config(
    config: *mut ShbConfig,
    edit: impl FnOnce(&mut RunOptions) -> Result<(), ShbStatus>,
) -> ShbStatus {
    guard(|| {
        let Some(cfg) = config.as_mut() else {
            return fail(ShbStatus::NullPointer, "null config handle");
        };
        let mut opts = cfg.opts.clone();
        if let Err(status) = edit(&mut opts) {
            return status;
        }
        match opts.to_config() {
            Ok(_) => {
                cfg.opts = opts;
                ShbStatus::Ok
            }
            Err(e) => fail(ShbStatus::InvalidParams, e.to_string()),
        }
    })
}

/// Sets the faulty-party profile: `none`, `crash`, `mute`, `equivocate`,
/// `withhold` or `garbage`.
///
/// # Safety
/// `config` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn shb_config_set_adversary(
    config: *mut ShbConfig,
    name: *const c_char,
) -> ShbStatus {
    edit_config(config, |o| {
        let name = read_str(name)?;
        o.adversary = name
            .parse::<AdversaryProfile>()
            .map_err(|e| fail(ShbStatus::InvalidParams, e))?;
        Ok(())
    })
}

/// Sets the delivery policy: `fair`, `targeted-delay[:PARTY[:KIND|ANY[:AGE]]]` or
/// `send-order[:AGE]`.
///
/// # Safety
/// `config` must be a live handle and `spec` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn shb_config_set_scheduler(
    config: *mut ShbConfig,
    spec: *const c_char,
) -> ShbStatus {
    edit_config(config, |o| {
        let spec = read_str(spec)?;
        o.scheduler = spec
            .parse::<SchedulerPolicy>()
            .map_err(|e| fail(ShbStatus::InvalidParams, e))?;
        Ok(())
    })
}

/// Sets committee size, requests per batch, security parameter (bytes) and P-PB
/// promotion steps in one call.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn shb_config_set_protocol(
    config: *mut ShbConfig,
    kappa: usize,
    batch_size: usize,
    sec_param: usize,
    promotion_steps: u16,
) -> ShbStatus {
    edit_config(config, |o| {
        o.kappa = Some(kappa);
        o.batch_size = batch_size;
        o.sec_param = sec_param;
        o.promotion_steps = promotion_steps;
        Ok(())
    })
}

/// Simulates and checks the configuration. Returns `SHB_STATUS_VIOLATION` when a
/// property failed or the run hit its liveness cap; the run handle is produced
/// either way so the trace can be inspected.
///
/// # Safety
/// `config` must be a live handle and `out` valid storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn shb_run(config: *const ShbConfig, out: *mut *mut ShbRun) -> ShbStatus {
    guard(|| {
        let (Some(cfg), false) = (config.as_ref(), out.is_null()) else {
            return fail(ShbStatus::NullPointer, "null config or output handle");
        };
        let sim = match cfg.opts.to_config() {
            Ok(s) => s,
            Err(e) => return fail(ShbStatus::InvalidParams, e.to_string()),
        };
        let record = match run_and_check(&sim) {
            Ok(r) => r,
            Err(e) => return fail(ShbStatus::InvalidParams, e.to_string()),
        };
        let ok = record.ok();
        let violations = record.violations();
        *out = Box::into_raw(Box::new(ShbRun { record }));
        if ok {
            ShbStatus::Ok
        } else {
            fail(
                ShbStatus::Violation,
                format!("violated: {}", violations.join(", ")),
            )
        }
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle from [`shb_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shb_run_free(run: *mut ShbRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Writes the trace's SHA-256 as 64 lowercase hex digits plus NUL into `buf`,
/// which must hold at least 65 bytes.
///
/// # Safety
/// `run` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn shb_run_digest(
    run: *const ShbRun,
    buf: *mut c_char,
    len: usize,
) -> ShbStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), buf.is_null()) else {
            return fail(ShbStatus::NullPointer, "null run handle or buffer");
        };
        let hex = run.record.digest.hex();
        if len < hex.len() + 1 {
            return fail(ShbStatus::BufferTooSmall, "digest needs 65 bytes");
        }
        ptr::copy_nonoverlapping(hex.as_ptr().cast::<c_char>(), buf, hex.len());
        *buf.add(hex.len()) = 0;
        ShbStatus::Ok
    })
}

/// Total messages and bytes sent during the run (self-sends included).
///
/// # Safety
/// `run` must be a live handle; `messages` and `bytes` valid or null.
#[no_mangle]
pub unsafe extern "C" fn shb_run_traffic(
    run: *const ShbRun,
    messages: *mut u64,
    bytes: *mut u64,
) -> ShbStatus {
    guard(|| {
        let Some(run) = run.as_ref() else {
            return fail(ShbStatus::NullPointer, "null run handle");
        };
        if let Some(m) = messages.as_mut() {
            *m = run.record.metrics.total.messages;
        }
        if let Some(b) = bytes.as_mut() {
            *b = run.record.metrics.total.bytes;
        }
        ShbStatus::Ok
    })
}

/// Writes the run's trace as line-delimited JSON.
///
/// # Safety
/// `run` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn shb_run_write_trace(run: *const ShbRun, path: *const c_char) -> ShbStatus {
    guard(|| {
        let Some(run) = run.as_ref() else {
            return fail(ShbStatus::NullPointer, "null run handle");
        };
        let path = match read_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match run.record.trace.write_jsonl(path) {
            Ok(()) => ShbStatus::Ok,
            Err(e) => fail(ShbStatus::Io, format!("{path}: {e}")),
        }
    })
}

/// Reads and checks a trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn shb_check_trace_file(path: *const c_char) -> ShbStatus {
    guard(|| {
        let path = match read_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let trace = match Trace::read_jsonl(path) {
            Ok(t) => t,
            Err(TraceError::Io(e)) => return fail(ShbStatus::Io, format!("{path}: {e}")),
            Err(e) => return fail(ShbStatus::MalformedTrace, e.to_string()),
        };
        match check_lemmas(&trace) {
            Ok(r) if r.all_hold() => ShbStatus::Ok,
            Ok(r) => {
                let names: Vec<&str> = r.violations().into_iter().map(|(n, _)| n).collect();
                fail(
                    ShbStatus::Violation,
                    format!("violated: {}", names.join(", ")),
                )
            }
            Err(e) => fail(ShbStatus::MalformedTrace, e.to_string()),
        }
    })
}

/// Per-epoch bytes of the all-parties-propose baseline, `n^2 v + K n^3 log2 n`.
#[no_mangle]
pub extern "C" fn shb_baseline_bytes(n: usize, v: usize, k: usize) -> f64 {
    baseline_bytes(n, v, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = shb_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    fn config(n: usize, f: usize, seed: u64) -> *mut ShbConfig {
        let mut cfg = ptr::null_mut();
        assert_eq!(
            unsafe { shb_config_new(n, f, seed, 2, &mut cfg) },
            ShbStatus::Ok
        );
        cfg
    }

    #[test]
    fn run_digest_is_reproducible() {
        let digest = || unsafe {
            let cfg = config(7, 2, 3);
            assert_eq!(
                shb_config_set_adversary(cfg, c"equivocate".as_ptr()),
                ShbStatus::Ok
            );
            assert_eq!(
                shb_config_set_scheduler(cfg, c"send-order:300".as_ptr()),
                ShbStatus::Ok
            );
            let mut run = ptr::null_mut();
            assert_eq!(shb_run(cfg, &mut run), ShbStatus::Ok);
            let mut buf = [0 as c_char; 65];
            assert_eq!(
                shb_run_digest(run, buf.as_mut_ptr(), buf.len()),
                ShbStatus::Ok
            );
            let (mut m, mut b) = (0u64, 0u64);
            assert_eq!(shb_run_traffic(run, &mut m, &mut b), ShbStatus::Ok);
            assert!(m > 0 && b > m);
            shb_run_free(run);
            shb_config_free(cfg);
            CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_string()
        };
        let a = digest();
        assert_eq!(a.len(), 64);
        assert_eq!(a, digest());
    }

    #[test]
    fn invalid_arguments_report_errors() {
        unsafe {
            let mut cfg = ptr::null_mut();
            assert_eq!(
                shb_config_new(5, 1, 0, 1, &mut cfg),
                ShbStatus::InvalidParams
            );
            assert!(cfg.is_null());
            assert!(last_error().contains("3f + 1"));
            assert_eq!(
                shb_config_new(4, 1, 0, 1, ptr::null_mut()),
                ShbStatus::NullPointer
            );

            let cfg = config(4, 1, 0);
            assert_eq!(
                shb_config_set_adversary(cfg, c"evil".as_ptr()),
                ShbStatus::InvalidParams
            );
            assert_eq!(
                shb_config_set_scheduler(cfg, ptr::null()),
                ShbStatus::NullPointer
            );
            assert_eq!(
                shb_config_set_protocol(cfg, 0, 1, 32, 1),
                ShbStatus::InvalidParams
            );
            assert_eq!(shb_config_set_protocol(cfg, 3, 2, 16, 2), ShbStatus::Ok);
            let mut run = ptr::null_mut();
            assert_eq!(shb_run(cfg, &mut run), ShbStatus::Ok);
            let mut small = [0 as c_char; 10];
            assert_eq!(
                shb_run_digest(run, small.as_mut_ptr(), small.len()),
                ShbStatus::BufferTooSmall
            );
            shb_run_free(run);
            shb_config_free(cfg);
            shb_config_free(ptr::null_mut());
            shb_run_free(ptr::null_mut());
        }
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("t.jsonl").to_str().unwrap()).unwrap();
        unsafe {
            let cfg = config(4, 1, 8);
            let mut run = ptr::null_mut();
            assert_eq!(shb_run(cfg, &mut run), ShbStatus::Ok);
            assert_eq!(shb_run_write_trace(run, path.as_ptr()), ShbStatus::Ok);
            assert_eq!(shb_check_trace_file(path.as_ptr()), ShbStatus::Ok);
            shb_run_free(run);
            shb_config_free(cfg);
        }
        let missing = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
        assert_eq!(
            unsafe { shb_check_trace_file(missing.as_ptr()) },
            ShbStatus::Io
        );
        let junk_path = dir.path().join("junk");
        std::fs::write(&junk_path, "x\ny\n").unwrap();
        let junk = CString::new(junk_path.to_str().unwrap()).unwrap();
        assert_eq!(
            unsafe { shb_check_trace_file(junk.as_ptr()) },
            ShbStatus::MalformedTrace
        );
    }

    #[test]
    fn baseline_and_version() {
        assert_eq!(shb_baseline_bytes(4, 256, 32), 8192.0);
        let v = unsafe { CStr::from_ptr(shb_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn generated_header_declares_the_api() {
        let header = include_str!("../include/slim_hbbft.h");
        for name in [
            "shb_config_new",
            "shb_run",
            "shb_run_digest",
            "shb_check_trace_file",
            "shb_last_error",
            "typedef struct ShbConfig ShbConfig",
        ] {
            assert!(header.contains(name), "{name} missing from header");
        }
    }
}
