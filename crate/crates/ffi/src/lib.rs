//! C ABI for `partstab`.
//!
//! Every function returns a [`PsStatus`]; on failure a message is available
//! from [`ps_last_error_message`] on the same thread. Handles are opaque and
//! must be released with the matching `*_free` function. Vectors are passed
//! as pointer plus length; states are stored row-major in copy-outs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use partstab::config::{load_scenario, ExperimentConfig, Scenario};
use partstab::integrator::{frozen_amplitude, simulate, Trajectory};
use partstab::runner::{execute, Command};
use partstab::tube::tube_distance;
use partstab::State;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    /// The simulation stopped early; the partial trajectory is still returned.
    SimulationFailed = 4,
    ComputationError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A validated scenario.
pub struct PsScenario {
    inner: Scenario,
}

/// A recorded closed-loop trajectory.
pub struct PsTrajectory {
    inner: Trajectory,
    n: usize,
    m: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PsDims {
    /// Task variables `y`.
    pub n1: usize,
    /// Remaining variables `z`.
    pub n2: usize,
    /// Controls.
    pub m: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn fail(status: PsStatus, msg: impl Into<String>) -> PsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PsStatus) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn boxed_scenario(cfg: Result<Scenario, String>, out: *mut *mut PsScenario) -> PsStatus {
    match cfg {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(PsScenario { inner })) };
            PsStatus::Ok
        }
        Err(msg) => fail(PsStatus::ConfigError, msg),
    }
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_scenario_from_toml(toml: *const c_char, out: *mut *mut PsScenario) -> PsStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(PsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let text = match CStr::from_ptr(toml).to_str() {
            Ok(t) => t,
            Err(e) => return fail(PsStatus::InvalidArgument, format!("config is not UTF-8: {e}")),
        };
        boxed_scenario(load_scenario(text).map_err(|e| e.to_string()), out)
    })
}

/// The built-in AUV helix scenario.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_scenario_paper_auv(out: *mut *mut PsScenario) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        boxed_scenario(ExperimentConfig::paper_auv().build().map_err(|e| e.to_string()), out)
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_scenario_free(scenario: *mut PsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_scenario_dims(scenario: *const PsScenario, out: *mut PsDims) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        let split = s.inner.system.split();
        *out = PsDims {
            n1: split.n1(),
            n2: split.n2(),
            m: s.inner.system.num_controls(),
        };
        PsStatus::Ok
    })
}

/// Runs the configured simulation. On [`PsStatus::SimulationFailed`] `*out`
/// still holds the partial trajectory and must be freed.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_simulate(scenario: *const PsScenario, out: *mut *mut PsTrajectory) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        let s = &s.inner;
        let Some(sim) = &s.sim else {
            return fail(PsStatus::InvalidArgument, "scenario has no [simulation] section");
        };
        let n = s.system.split().n();
        let m = s.system.num_controls();
        let (traj, status) = match simulate(s.system.as_ref(), &s.curve, &s.params, sim, &s.tube) {
            Ok(t) => (t, PsStatus::Ok),
            Err(f) => {
                set_error(f.to_string());
                (f.partial, PsStatus::SimulationFailed)
            }
        };
        *out = Box::into_raw(Box::new(PsTrajectory { inner: traj, n, m }));
        status
    })
}

/// # Safety
/// `trajectory` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_trajectory_free(trajectory: *mut PsTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of recorded rows.
///
/// # Safety
/// `trajectory` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_trajectory_len(trajectory: *const PsTrajectory, len: *mut usize) -> PsStatus {
    guard(|| {
        let (Some(t), false) = (trajectory.as_ref(), len.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        *len = t.inner.len();
        PsStatus::Ok
    })
}

/// Copies the first `rows` recorded rows. Any output pointer may be null to
/// skip it; otherwise `times` and `errors` need `rows` entries, `states`
/// `rows·n` and `controls` `rows·m`.
///
/// # Safety
/// Non-null buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ps_trajectory_copy(
    trajectory: *const PsTrajectory,
    rows: usize,
    times: *mut f64,
    states: *mut f64,
    controls: *mut f64,
    errors: *mut f64,
) -> PsStatus {
    guard(|| {
        let Some(t) = trajectory.as_ref() else {
            return fail(PsStatus::NullPointer, "null trajectory");
        };
        let tr = &t.inner;
        if rows > tr.len() {
            return fail(
                PsStatus::InvalidArgument,
                format!("requested {rows} rows but the trajectory has {}", tr.len()),
            );
        }
        for i in 0..rows {
            if !times.is_null() {
                *times.add(i) = tr.times[i];
            }
            if !errors.is_null() {
                *errors.add(i) = tr.errors[i];
            }
            if !states.is_null() {
                ptr::copy_nonoverlapping(tr.states[i].as_ptr(), states.add(i * t.n), t.n);
            }
            if !controls.is_null() {
                ptr::copy_nonoverlapping(tr.controls[i].as_ptr(), controls.add(i * t.m), t.m);
            }
        }
        PsStatus::Ok
    })
}

fn state_arg(s: &Scenario, x: Option<&[f64]>) -> Result<State, PsStatus> {
    let x = x.ok_or_else(|| fail(PsStatus::NullPointer, "null state"))?;
    let n = s.system.split().n();
    if x.len() != n {
        return Err(fail(
            PsStatus::InvalidArgument,
            format!("state must have {n} components, got {}", x.len()),
        ));
    }
    Ok(State::from_column_slice(x))
}

/// `max(0, ‖y − y*(t)‖ − p)`.
///
/// # Safety
/// `x` must point to `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_tube_distance(
    scenario: *const PsScenario,
    x: *const f64,
    len: usize,
    t: f64,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        let s = &s.inner;
        let x = match state_arg(s, slice(x, len)) {
            Ok(x) => x,
            Err(st) => return st,
        };
        match tube_distance(s.system.split(), &x, t, &s.curve, &s.tube) {
            Ok(d) => {
                *out = d;
                PsStatus::Ok
            }
            Err(e) => fail(PsStatus::ComputationError, e.to_string()),
        }
    })
}

fn frozen(s: &Scenario, x: &State, t_frozen: f64) -> Result<partstab::controller::AmplitudeVector, PsStatus> {
    frozen_amplitude(s.system.as_ref(), &s.params, x, &s.curve.eval(t_frozen))
        .map_err(|e| fail(PsStatus::ComputationError, e.to_string()))
}

/// Amplitudes `a = −αF(x)⁻¹(y − y*(t))`; `out` needs `n1` entries.
///
/// # Safety
/// `x` must point to `len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ps_amplitude(
    scenario: *const PsScenario,
    x: *const f64,
    len: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        let s = &s.inner;
        let n1 = s.system.split().n1();
        if out_len < n1 {
            return fail(PsStatus::BufferTooSmall, format!("amplitude needs {n1} entries"));
        }
        let a = match state_arg(s, slice(x, len)).and_then(|x| frozen(s, &x, t)) {
            Ok(a) => a,
            Err(st) => return st,
        };
        ptr::copy_nonoverlapping(a.0.as_ptr(), out, n1);
        PsStatus::Ok
    })
}

/// Control `u(t)` with the state `x` and reference `y*(t_frozen)` held from
/// the sampling instant `t_frozen`; `out` needs `m` entries.
///
/// # Safety
/// `x` must point to `len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ps_control(
    scenario: *const PsScenario,
    t: f64,
    t_frozen: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        let s = &s.inner;
        let m = s.system.num_controls();
        if out_len < m {
            return fail(PsStatus::BufferTooSmall, format!("control needs {m} entries"));
        }
        let a = match state_arg(s, slice(x, len)).and_then(|x| frozen(s, &x, t_frozen)) {
            Ok(a) => a,
            Err(st) => return st,
        };
        let u = partstab::controller::control_from_amplitude(t, &a, &s.params, m);
        ptr::copy_nonoverlapping(u.as_ptr(), out, m);
        PsStatus::Ok
    })
}

/// Runs the `analyze` command and returns the report as JSON. Release the
/// string with [`ps_string_free`].
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_analyze_json(scenario: *const PsScenario, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(PsStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        match execute(&s.inner, Command::Analyze) {
            Ok(exec) => {
                let json = CString::new(exec.report.to_json()).expect("JSON has no NUL bytes");
                *out = json.into_raw();
                PsStatus::Ok
            }
            Err(e) => fail(PsStatus::ComputationError, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
