//! C ABI over the risk-calculator pipeline: parse a trace file, learn
//! time-allocation profiles, score and rank users against per-region
//! infected/susceptible fractions.
//!
//! Conventions: objects cross the boundary as opaque handles created and
//! destroyed here; every fallible call returns an [`EtStatus`] and writes
//! results through out-pointers; string results copy into caller buffers;
//! [`et_last_error_message`] returns a thread-local description of the most
//! recent failure, valid until the next call on the same thread.

use epitrace_core::error::{Error, ErrorCategory};
use epitrace_core::risk::{rank_users, risk_score, RegionState};
use epitrace_core::time::{Timestamp, TimeWindow};
use epitrace_core::trace::{build_profiles, ProfileSet, TraceSet, UserId};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtStatus {
    EtOk = 0,
    /// A required pointer argument was null.
    EtNullArgument = 1,
    /// A string argument was not valid UTF-8.
    EtInvalidUtf8 = 2,
    /// Invalid arguments or configuration.
    EtUsage = 3,
    /// Malformed or inconsistent input data.
    EtData = 4,
    /// I/O or internal failure.
    EtRuntime = 5,
    /// An output buffer was too small; the required size was reported.
    EtBufferTooSmall = 6,
    /// An index was out of range.
    EtIndexOutOfRange = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> EtStatus {
    match err.category() {
        ErrorCategory::Usage => EtStatus::EtUsage,
        ErrorCategory::Data => EtStatus::EtData,
        ErrorCategory::Runtime => EtStatus::EtRuntime,
    }
}

fn fail(err: Error) -> EtStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Runs a body that may touch library code which asserts; a panic becomes
/// `EtRuntime` instead of unwinding across the C boundary.
fn guarded(body: impl FnOnce() -> EtStatus) -> EtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            EtStatus::EtRuntime
        }
    }
}

/// Message describing the most recent failure on this thread. Never null;
/// empty when no failure occurred. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn et_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parsed mobility traces (opaque).
pub struct EtTraceSet {
    inner: TraceSet,
}

/// Per-user time-allocation profiles (opaque).
pub struct EtProfileSet {
    inner: ProfileSet,
    n_regions: usize,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, EtStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(EtStatus::EtNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        EtStatus::EtInvalidUtf8
    })
}

/// Parses a trace CSV file into a new trace set. On success writes a handle
/// the caller must free with [`et_trace_set_free`].
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to a writable
/// pointer slot; both stay valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_parse_file(
    path: *const c_char,
    strict: bool,
    out: *mut *mut EtTraceSet,
) -> EtStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return EtStatus::EtNullArgument;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::open(Path::new(path)) {
            Ok(f) => f,
            Err(e) => return fail(Error::io(format!("opening {path}"), e)),
        };
        match epitrace_core::trace::parse_traces(
            BufReader::new(file),
            epitrace_core::trace::TraceSetBuilder::new(),
            strict,
        ) {
            Ok((set, _report)) => {
                *out = Box::into_raw(Box::new(EtTraceSet { inner: set }));
                EtStatus::EtOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a trace set; a null handle is a no-op.
///
/// # Safety
/// `set` must be null or a pointer returned by [`et_trace_set_parse_file`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_free(set: *mut EtTraceSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a live trace-set handle.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_user_count(set: *const EtTraceSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.n_users())
}

/// # Safety
/// `set` must be a live trace-set handle.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_region_count(set: *const EtTraceSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.n_regions())
}

/// # Safety
/// `set` must be a live trace-set handle.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_event_count(set: *const EtTraceSet) -> u64 {
    set.as_ref().map_or(0, |s| s.inner.n_events())
}

unsafe fn copy_name(
    name: &str,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> EtStatus {
    let bytes = name.as_bytes();
    if !len.is_null() {
        *len = bytes.len() + 1;
    }
    if buf.is_null() || cap < bytes.len() + 1 {
        set_error("buffer too small for identifier");
        return EtStatus::EtBufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    EtStatus::EtOk
}

/// Copies the NUL-terminated identifier of user `index` (registry order)
/// into `buf`. `len` (optional) receives the required size including the
/// terminator, also on `ET_BUFFER_TOO_SMALL`.
///
/// # Safety
/// `set` must be a live handle; `buf` must point to `cap` writable bytes;
/// `len` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_user_id(
    set: *const EtTraceSet,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> EtStatus {
    guarded(|| {
        let Some(set) = set.as_ref() else {
            set_error("null trace set");
            return EtStatus::EtNullArgument;
        };
        if index >= set.inner.n_users() {
            set_error("user index out of range");
            return EtStatus::EtIndexOutOfRange;
        }
        copy_name(set.inner.user_name(UserId(index as u32)), buf, cap, len)
    })
}

/// Copies the NUL-terminated identifier of region `index` (registry order);
/// same contract as [`et_trace_set_user_id`].
///
/// # Safety
/// As for [`et_trace_set_user_id`].
#[no_mangle]
pub unsafe extern "C" fn et_trace_set_region_id(
    set: *const EtTraceSet,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> EtStatus {
    guarded(|| {
        let Some(set) = set.as_ref() else {
            set_error("null trace set");
            return EtStatus::EtNullArgument;
        };
        if index >= set.inner.n_regions() {
            set_error("region index out of range");
            return EtStatus::EtIndexOutOfRange;
        }
        copy_name(
            set.inner.region_name(epitrace_core::trace::RegionId(index as u32)),
            buf,
            cap,
            len,
        )
    })
}

/// Learns time-allocation profiles over the learning window
/// `[start_unix, end_unix)` (UTC seconds). Users without usable events carry
/// no profile (see [`et_profile_set_has`]). The caller frees the handle with
/// [`et_profile_set_free`].
///
/// # Safety
/// `set` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn et_profiles_build(
    set: *const EtTraceSet,
    start_unix: i64,
    end_unix: i64,
    out: *mut *mut EtProfileSet,
) -> EtStatus {
    guarded(|| {
        let Some(set) = set.as_ref() else {
            set_error("null trace set");
            return EtStatus::EtNullArgument;
        };
        if out.is_null() {
            set_error("null out pointer");
            return EtStatus::EtNullArgument;
        }
        let window = match TimeWindow::new(
            Timestamp::from_unix(start_unix),
            Timestamp::from_unix(end_unix),
        ) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        match build_profiles(&set.inner, window) {
            Ok(profiles) => {
                *out = Box::into_raw(Box::new(EtProfileSet {
                    inner: profiles,
                    n_regions: set.inner.n_regions(),
                }));
                EtStatus::EtOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a profile set; a null handle is a no-op.
///
/// # Safety
/// `profiles` must be null or a live handle from [`et_profiles_build`].
#[no_mangle]
pub unsafe extern "C" fn et_profile_set_free(profiles: *mut EtProfileSet) {
    if !profiles.is_null() {
        drop(Box::from_raw(profiles));
    }
}

/// # Safety
/// `profiles` must be a live profile-set handle.
#[no_mangle]
pub unsafe extern "C" fn et_profile_set_user_count(profiles: *const EtProfileSet) -> usize {
    profiles.as_ref().map_or(0, |p| p.inner.n_users())
}

/// True when user `index` carries a profile.
///
/// # Safety
/// `profiles` must be a live profile-set handle.
#[no_mangle]
pub unsafe extern "C" fn et_profile_set_has(profiles: *const EtProfileSet, index: usize) -> bool {
    profiles
        .as_ref()
        .is_some_and(|p| p.inner.get(UserId(index as u32)).is_some())
}

/// Copies user `index`'s time-allocation vector (one entry per region in
/// registry order) into `out`.
///
/// # Safety
/// `profiles` must be a live handle and `out` must point to `cap` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn et_profile_set_allocation(
    profiles: *const EtProfileSet,
    index: usize,
    out: *mut f64,
    cap: usize,
) -> EtStatus {
    guarded(|| {
        let Some(p) = profiles.as_ref() else {
            set_error("null profile set");
            return EtStatus::EtNullArgument;
        };
        let Some(profile) = p.inner.get(UserId(index as u32)) else {
            set_error("user has no profile");
            return EtStatus::EtIndexOutOfRange;
        };
        if out.is_null() || cap < p.n_regions {
            set_error("buffer too small for allocation vector");
            return EtStatus::EtBufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(profile.allocation().as_ptr(), out, p.n_regions);
        EtStatus::EtOk
    })
}

unsafe fn region_state_from_raw(
    infected: *const f64,
    susceptible: *const f64,
    n_regions: usize,
    expected: usize,
) -> Result<RegionState, EtStatus> {
    if infected.is_null() || susceptible.is_null() {
        set_error("null fraction array");
        return Err(EtStatus::EtNullArgument);
    }
    if n_regions != expected {
        set_error("region count differs from the trace registry");
        return Err(EtStatus::EtUsage);
    }
    let i = std::slice::from_raw_parts(infected, n_regions).to_vec();
    let s = std::slice::from_raw_parts(susceptible, n_regions).to_vec();
    RegionState::new(0, i, s).map_err(|e| {
        set_error(&e.to_string());
        EtStatus::EtData
    })
}

/// Contagion risk of user `index` against per-region infected/susceptible
/// fractions (registry order, `i + s <= 1` per region).
///
/// # Safety
/// `profiles` must be a live handle; `infected` and `susceptible` must point
/// to `n_regions` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn et_risk_score(
    profiles: *const EtProfileSet,
    index: usize,
    infected: *const f64,
    susceptible: *const f64,
    n_regions: usize,
    out: *mut f64,
) -> EtStatus {
    guarded(|| {
        let Some(p) = profiles.as_ref() else {
            set_error("null profile set");
            return EtStatus::EtNullArgument;
        };
        if out.is_null() {
            set_error("null out pointer");
            return EtStatus::EtNullArgument;
        }
        let Some(profile) = p.inner.get(UserId(index as u32)) else {
            set_error("user has no profile");
            return EtStatus::EtIndexOutOfRange;
        };
        let state = match region_state_from_raw(infected, susceptible, n_regions, p.n_regions) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match risk_score(profile, &state) {
            Ok(score) => {
                *out = score.score;
                EtStatus::EtOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Ranks every profiled user by descending risk (ties by user index).
/// Writes up to `cap` entries into `out_users`/`out_scores`; `out_len`
/// receives the full ranking length. Returns `ET_BUFFER_TOO_SMALL` without
/// writing entries when `cap` is insufficient.
///
/// # Safety
/// `profiles` must be a live handle; array arguments must match their
/// declared capacities; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn et_rank(
    profiles: *const EtProfileSet,
    infected: *const f64,
    susceptible: *const f64,
    n_regions: usize,
    out_users: *mut u32,
    out_scores: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> EtStatus {
    guarded(|| {
        let Some(p) = profiles.as_ref() else {
            set_error("null profile set");
            return EtStatus::EtNullArgument;
        };
        if out_len.is_null() {
            set_error("null out_len");
            return EtStatus::EtNullArgument;
        }
        let state = match region_state_from_raw(infected, susceptible, n_regions, p.n_regions) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let eligible: Vec<UserId> = (0..p.inner.n_users() as u32)
            .map(UserId)
            .filter(|&u| p.inner.get(u).is_some())
            .collect();
        let ranking = match rank_users(|u| p.inner.get(u), &state, &eligible) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        *out_len = ranking.len();
        if out_users.is_null() || out_scores.is_null() || cap < ranking.len() {
            set_error("buffer too small for ranking");
            return EtStatus::EtBufferTooSmall;
        }
        for (i, entry) in ranking.entries().iter().enumerate() {
            *out_users.add(i) = entry.user.0;
            *out_scores.add(i) = entry.score;
        }
        EtStatus::EtOk
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_trace(dir: &std::path::Path) -> std::path::PathBuf {
        let path = dir.join("traces.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "user_id,timestamp,region_id").unwrap();
        // u0 splits a day between A and B; u1 stays in B
        writeln!(f, "u0,2013-01-01T00:00:00Z,A").unwrap();
        writeln!(f, "u0,2013-01-01T12:00:00Z,B").unwrap();
        writeln!(f, "u1,2013-01-01T00:00:00Z,B").unwrap();
        path
    }

    fn parse(path: &std::path::Path) -> *mut EtTraceSet {
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut EtTraceSet = std::ptr::null_mut();
        let status = unsafe { et_trace_set_parse_file(c_path.as_ptr(), true, &mut handle) };
        assert_eq!(status, EtStatus::EtOk);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn parse_counts_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let set = parse(&write_trace(dir.path()));
        unsafe {
            assert_eq!(et_trace_set_user_count(set), 2);
            assert_eq!(et_trace_set_region_count(set), 2);
            assert_eq!(et_trace_set_event_count(set), 3);

            let mut buf = [0i8; 8];
            let mut needed = 0usize;
            let st = et_trace_set_user_id(set, 0, buf.as_mut_ptr().cast(), 8, &mut needed);
            assert_eq!(st, EtStatus::EtOk);
            assert_eq!(needed, 3);
            let name = CStr::from_ptr(buf.as_ptr().cast()).to_str().unwrap();
            assert_eq!(name, "u0");

            // undersized buffer reports the required length
            let st = et_trace_set_user_id(set, 1, buf.as_mut_ptr().cast(), 1, &mut needed);
            assert_eq!(st, EtStatus::EtBufferTooSmall);
            assert_eq!(needed, 3);

            let st = et_trace_set_region_id(set, 9, buf.as_mut_ptr().cast(), 8, &mut needed);
            assert_eq!(st, EtStatus::EtIndexOutOfRange);

            et_trace_set_free(set);
        }
    }

    #[test]
    fn parse_failure_sets_message() {
        let c_path = CString::new("/nonexistent/trace.csv").unwrap();
        let mut handle: *mut EtTraceSet = std::ptr::null_mut();
        let status = unsafe { et_trace_set_parse_file(c_path.as_ptr(), false, &mut handle) };
        assert_eq!(status, EtStatus::EtRuntime);
        let msg = unsafe { CStr::from_ptr(et_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("nonexistent"));
    }

    #[test]
    fn profiles_scores_and_ranking_match_core() {
        let dir = tempfile::tempdir().unwrap();
        let set = parse(&write_trace(dir.path()));
        let day = 86_400i64;
        let start = 1356998400; // 2013-01-01T00:00:00Z
        unsafe {
            let mut profiles: *mut EtProfileSet = std::ptr::null_mut();
            let st = et_profiles_build(set, start, start + day, &mut profiles);
            assert_eq!(st, EtStatus::EtOk);
            assert_eq!(et_profile_set_user_count(profiles), 2);
            assert!(et_profile_set_has(profiles, 0));

            let mut alloc = [0.0f64; 2];
            let st = et_profile_set_allocation(profiles, 0, alloc.as_mut_ptr(), 2);
            assert_eq!(st, EtStatus::EtOk);
            assert_eq!(alloc, [0.5, 0.5]);

            let infected = [0.2f64, 0.0];
            let susceptible = [0.8f64, 1.0];
            let mut score = 0.0f64;
            let st = et_risk_score(profiles, 0, infected.as_ptr(), susceptible.as_ptr(), 2, &mut score);
            assert_eq!(st, EtStatus::EtOk);
            assert!((score - 0.09).abs() < 1e-15);

            // wrong region count is a usage error
            let st = et_risk_score(profiles, 0, infected.as_ptr(), susceptible.as_ptr(), 1, &mut score);
            assert_eq!(st, EtStatus::EtUsage);

            let mut users = [0u32; 4];
            let mut scores = [0.0f64; 4];
            let mut len = 0usize;
            let st = et_rank(
                profiles,
                infected.as_ptr(),
                susceptible.as_ptr(),
                2,
                users.as_mut_ptr(),
                scores.as_mut_ptr(),
                4,
                &mut len,
            );
            assert_eq!(st, EtStatus::EtOk);
            assert_eq!(len, 2);
            // u0 touches the infected region, u1 does not
            assert_eq!(users[0], 0);
            assert_eq!(users[1], 1);
            assert!(scores[0] > scores[1]);

            // capacity probe: len still reported
            let st = et_rank(
                profiles,
                infected.as_ptr(),
                susceptible.as_ptr(),
                2,
                std::ptr::null_mut(),
                std::ptr::null_mut(),
                0,
                &mut len,
            );
            assert_eq!(st, EtStatus::EtBufferTooSmall);
            assert_eq!(len, 2);

            et_profile_set_free(profiles);
            et_trace_set_free(set);
        }
    }

    #[test]
    fn null_handles_are_rejected_not_crashed() {
        unsafe {
            assert_eq!(et_trace_set_user_count(std::ptr::null()), 0);
            let mut out = 0.0f64;
            let st = et_risk_score(std::ptr::null(), 0, &0.0, &0.0, 1, &mut out);
            assert_eq!(st, EtStatus::EtNullArgument);
            et_trace_set_free(std::ptr::null_mut());
            et_profile_set_free(std::ptr::null_mut());
        }
    }
}
