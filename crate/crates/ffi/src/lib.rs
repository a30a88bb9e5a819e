//! C interface to the geodc solver.
//!
//! Scenarios and solutions are opaque handles created and released through
//! this interface. Every function returns a [`GeodcStatus`]; on failure the
//! message of the last error on the calling thread is available from
//! [`geodc_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geodc::allocation::allocate;
use geodc::integer::solve_heuristic;
use geodc::model::{Decision, PowerSource, Scenario};
use geodc::scp::solve_scp;
use geodc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeodcStatus {
    Ok = 0,
    Infeasible = 1,
    Config = 2,
    Domain = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Internal = 6,
    Panic = 7,
}

/// A validated single-slot scenario.
pub struct GeodcScenario {
    inner: Scenario,
}

/// Decisions and objective of a solve.
pub struct GeodcSolution {
    decisions: Vec<Decision>,
    objective: f64,
    json: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(GeodcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Infeasible(_) | Error::Unstable { .. } => GeodcStatus::Infeasible,
            Error::Domain(_) => GeodcStatus::Domain,
            Error::Internal(_) => GeodcStatus::Internal,
            _ => GeodcStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GeodcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GeodcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GeodcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            GeodcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn geodc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn geodc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn geodc_scenario_load_json(json: *const c_char, out: *mut *mut GeodcScenario) -> GeodcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(GeodcStatus::InvalidUtf8, format!("scenario is not UTF-8: {e}")))?;
        let inner = Scenario::from_json(text)?;
        inner.validate()?;
        *out = Box::into_raw(Box::new(GeodcScenario { inner }));
        Ok(())
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from [`geodc_scenario_load_json`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodc_scenario_free(scenario: *mut GeodcScenario) {
    if !scenario.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(scenario))));
    }
}

/// Number of data centers, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geodc_scenario_dc_count(scenario: *const GeodcScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.dc_count())
}

fn solution<T: serde::Serialize>(sol: &T, decisions: Vec<Decision>, objective: f64) -> Result<*mut GeodcSolution, Failure> {
    let json = serde_json::to_string(sol).map_err(|e| Failure(GeodcStatus::Internal, e.to_string()))?;
    Ok(Box::into_raw(Box::new(GeodcSolution { decisions, objective, json })))
}

/// Solves the continuous relaxation.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn geodc_solve_relaxed(scenario: *const GeodcScenario, out: *mut *mut GeodcSolution) -> GeodcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = borrow(scenario, "scenario")?;
        let r = solve_scp(&s.inner)?;
        *out = solution(&r, r.decisions.clone(), r.objective)?;
        Ok(())
    })
}

/// Solves with whole server counts through the rounding heuristic.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn geodc_solve_heuristic(scenario: *const GeodcScenario, out: *mut *mut GeodcSolution) -> GeodcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = borrow(scenario, "scenario")?;
        let r = solve_heuristic(&s.inner)?;
        *out = solution(&r, r.decisions.clone(), r.objective)?;
        Ok(())
    })
}

/// # Safety
/// `solution` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn geodc_solution_objective(solution: *const GeodcSolution, out: *mut f64) -> GeodcStatus {
    guard(|| {
        let s = borrow(solution, "solution")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.objective;
        Ok(())
    })
}

/// Arrival rate, active servers and battery action of data center `dc`.
/// Any output pointer may be null.
///
/// # Safety
/// `solution` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn geodc_solution_decision(
    solution: *const GeodcSolution,
    dc: usize,
    out_arrival_rate: *mut f64,
    out_active_servers: *mut f64,
    out_battery_delta_kwh: *mut f64,
) -> GeodcStatus {
    guard(|| {
        let s = borrow(solution, "solution")?;
        let d = s
            .decisions
            .get(dc)
            .ok_or_else(|| Failure(GeodcStatus::Domain, format!("dc {dc} outside 0..{}", s.decisions.len())))?;
        for (p, v) in [
            (out_arrival_rate, d.arrival_rate),
            (out_active_servers, d.active_servers),
            (out_battery_delta_kwh, d.battery_delta_kwh),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// The full solution as JSON. Release the string with [`geodc_string_free`].
///
/// # Safety
/// `solution` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn geodc_solution_to_json(solution: *const GeodcSolution, out: *mut *mut c_char) -> GeodcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = borrow(solution, "solution")?;
        let c = CString::new(s.json.as_str()).map_err(|e| Failure(GeodcStatus::Internal, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or come from a solve call, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn geodc_solution_free(solution: *mut GeodcSolution) {
    if !solution.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(solution))));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn geodc_string_free(s: *mut c_char) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(CString::from_raw(s))));
    }
}

/// Cheapest split of `demand` kWh over `n` sources with the given prices and
/// quadratic coefficients. Writes `n` purchases to `out_q`; the cost and
/// marginal cost outputs may be null.
///
/// # Safety
/// `prices` and `pif_coeffs` must point to `n` readable values and `out_q`
/// to `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn geodc_allocate(
    prices: *const f64,
    pif_coeffs: *const f64,
    n: usize,
    demand: f64,
    out_q: *mut f64,
    out_cost: *mut f64,
    out_marginal: *mut f64,
) -> GeodcStatus {
    guard(|| {
        if prices.is_null() || pif_coeffs.is_null() || out_q.is_null() {
            return Err(null("prices, pif_coeffs or out_q"));
        }
        if n == 0 {
            return Err(Failure(GeodcStatus::Config, "need at least one source".into()));
        }
        let p = std::slice::from_raw_parts(prices, n);
        let a = std::slice::from_raw_parts(pif_coeffs, n);
        let sources = p.iter().zip(a).map(|(&p, &a)| PowerSource::new(p, 0.0, a)).collect::<Result<Vec<_>, _>>()?;
        let r = allocate(&sources, demand)?;
        std::slice::from_raw_parts_mut(out_q, n).copy_from_slice(&r.purchases);
        if let Some(c) = out_cost.as_mut() {
            *c = r.total_cost;
        }
        if let Some(m) = out_marginal.as_mut() {
            *m = r.marginal_cost;
        }
        Ok(())
    })
}
