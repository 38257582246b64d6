//! C ABI over the sprintopt primitives.
//!
//! Every fallible function returns a [`SpoStatus`]. On failure the message is
//! available from [`spo_last_error`] on the calling thread until the next call.
//! Strings handed out by the library must be released with [`spo_string_free`];
//! handles with their matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use sprintopt::calibrate::{micro_f_beta, scut};
use sprintopt::engine::{Engine, SprintSummary};
use sprintopt::error::Error;
use sprintopt::hyperband::derive_config;
use sprintopt::space::{HPoint, MarginPolicy, SearchSpace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Conflict = 5,
    Priming = 6,
    InsufficientTrials = 7,
    Io = 8,
    Json = 9,
    Panic = 10,
}

impl From<&Error> for SpoStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::NotFound { .. } => SpoStatus::NotFound,
            Error::Conflict(_) => SpoStatus::Conflict,
            Error::Priming { .. } => SpoStatus::Priming,
            Error::InsufficientTrials { .. } => SpoStatus::InsufficientTrials,
            Error::Io(_) => SpoStatus::Io,
            Error::Json(_) => SpoStatus::Json,
            _ => SpoStatus::InvalidArgument,
        }
    }
}

/// Opaque search space.
pub struct SpoSpace(SearchSpace);

/// Opaque engine bound to a store directory.
pub struct SpoEngine(Engine);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpoHyperbandConfig {
    pub max_resource: u64,
    pub eta: u64,
    pub s_max: u32,
    pub budget: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpoScut {
    pub threshold: f64,
    pub f_beta: f64,
    pub guarded: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SpoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SpoStatus::from(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SpoStatus::Json, e.to_string())
    }
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn guard<F>(f: F) -> SpoStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside sprintopt".into());
            SpoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SpoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpoStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn space_arg<'a>(p: *const SpoSpace) -> Result<&'a SearchSpace, Failure> {
    p.as_ref().map(|s| &s.0).ok_or_else(|| null("space"))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(SpoStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message of the last failure on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn spo_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn spo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a search space from JSON.
#[no_mangle]
pub unsafe extern "C" fn spo_space_from_json(
    json: *const c_char,
    out: *mut *mut SpoSpace,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let space = SearchSpace::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(SpoSpace(space)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_space_free(space: *mut SpoSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

#[no_mangle]
pub unsafe extern "C" fn spo_space_to_json(
    space: *const SpoSpace,
    out: *mut *mut c_char,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = c_string(space_arg(space)?.to_json()?)?;
        Ok(())
    })
}

/// Draws one point uniformly; written as a JSON object.
#[no_mangle]
pub unsafe extern "C" fn spo_space_sample(
    space: *const SpoSpace,
    seed: u64,
    out: *mut *mut c_char,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let point = space_arg(space)?.sample_uniform(seed)?;
        *out = c_string(serde_json::to_string(&point)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_space_contains(
    space: *const SpoSpace,
    point_json: *const c_char,
    out: *mut bool,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let space = space_arg(space)?;
        let point: HPoint = serde_json::from_str(str_arg(point_json, "point_json")?)?;
        *out = space.contains(&point);
        Ok(())
    })
}

#[derive(Deserialize)]
struct ScoredPoint {
    point: HPoint,
    score: f64,
}

/// Shrinks the space to the hull of the `k` best scored points (lower is
/// better) plus default margins. `scored_json` is `[{"point": {...}, "score": x}]`.
#[no_mangle]
pub unsafe extern "C" fn spo_space_prune(
    space: *const SpoSpace,
    scored_json: *const c_char,
    k: usize,
    out: *mut *mut SpoSpace,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let space = space_arg(space)?;
        let scored: Vec<ScoredPoint> = serde_json::from_str(str_arg(scored_json, "scored_json")?)?;
        let pairs: Vec<(&HPoint, f64)> = scored.iter().map(|s| (&s.point, s.score)).collect();
        let pruned = space.prune_to_top_k(&pairs, k, &MarginPolicy::default())?;
        *out = Box::into_raw(Box::new(SpoSpace(pruned.space)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_hyperband_derive(
    max_resource: u64,
    eta: u64,
    out: *mut SpoHyperbandConfig,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = derive_config(max_resource, eta)?;
        *out = SpoHyperbandConfig {
            max_resource: c.max_resource,
            eta: c.eta,
            s_max: c.s_max,
            budget: c.budget,
        };
        Ok(())
    })
}

/// F-beta optimal cut over `n` (probability, gold) pairs, floored at `low_bound`.
#[no_mangle]
pub unsafe extern "C" fn spo_scut(
    probs: *const f64,
    gold: *const bool,
    n: usize,
    beta: f64,
    low_bound: f64,
    out: *mut SpoScut,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n > 0 && (probs.is_null() || gold.is_null()) {
            return Err(null("probs/gold"));
        }
        let pairs: Vec<(f64, bool)> = if n == 0 {
            Vec::new()
        } else {
            let p = std::slice::from_raw_parts(probs, n);
            let g = std::slice::from_raw_parts(gold, n);
            p.iter().copied().zip(g.iter().copied()).collect()
        };
        let r = scut(&pairs, beta, low_bound);
        *out = SpoScut {
            threshold: r.threshold,
            f_beta: r.f_beta,
            guarded: r.guarded,
        };
        Ok(())
    })
}

/// Micro-F1 from pooled counts; 0 when there is nothing to score.
#[no_mangle]
pub extern "C" fn spo_micro_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    micro_f_beta(tp, fp, fn_, 1.0)
}

/// Opens (replaying) the store at `root`.
#[no_mangle]
pub unsafe extern "C" fn spo_engine_open(
    root: *const c_char,
    out: *mut *mut SpoEngine,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let engine = Engine::open(str_arg(root, "root")?)?;
        *out = Box::into_raw(Box::new(SpoEngine(engine)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spo_engine_free(engine: *mut SpoEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Summary of a sprint (status, counts, incumbent) as JSON.
#[no_mangle]
pub unsafe extern "C" fn spo_engine_report(
    engine: *const SpoEngine,
    sprint: *const c_char,
    out: *mut *mut c_char,
) -> SpoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let s = engine.0.sprint(str_arg(sprint, "sprint")?)?;
        *out = c_string(serde_json::to_string(&SprintSummary::of(&s))?)?;
        Ok(())
    })
}
