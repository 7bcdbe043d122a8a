//! C ABI for `pfcontrol`.
//!
//! Problems are built from the same JSON documents the CLI reads and are
//! handed out as opaque pointers. Controls cross the boundary as flat
//! `double` arrays of `steps * cells` entries: running levels `1..=steps` in
//! order, each level x-fastest. Every fallible call returns a [`PfcStatus`];
//! the message for the last failure on the calling thread is available from
//! [`pfc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pfcontrol::config::{parse_config, LoadedConfig};
use pfcontrol::control::{evaluate, optimize, project_box, reduced_cost, OptimizeOptions, Termination};
use pfcontrol::dynamics::{solve_state, Trajectory};
use pfcontrol::grid::{Field, SpaceTimeField};
use pfcontrol::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Parse, validation or configuration error.
    InvalidConfig = 2,
    /// An array length does not match the problem.
    ShapeMismatch = 3,
    /// Newton, linear or root solve failure.
    SolverFailure = 4,
    /// A value left the domain of the potential.
    DomainError = 5,
    /// A level index past the end of a trajectory.
    OutOfRange = 6,
    /// Rust panic caught at the boundary; this is a bug.
    Internal = 7,
}

/// A validated problem: grid, time grid, dynamics, cost, control box and the
/// configured initial control.
pub struct PfcProblem {
    loaded: LoadedConfig,
}

/// Time levels `0..=steps` of a state solve.
pub struct PfcTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> PfcStatus {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Parse(_) | Error::Io(_) => PfcStatus::InvalidConfig,
        Error::ShapeMismatch { .. } => PfcStatus::ShapeMismatch,
        Error::OutOfDomain { .. } | Error::DomainEscape { .. } => PfcStatus::DomainError,
        Error::NonZeroMean { .. }
        | Error::SolverDivergence { .. }
        | Error::LinearSolveDivergence { .. }
        | Error::RootSolveFailure { .. }
        | Error::NewtonDivergence { .. } => PfcStatus::SolverFailure,
    }
}

struct Fail(PfcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PfcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PfcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PfcStatus::Internal
        }
    }
}

unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(data, len))
}

unsafe fn loaded<'a>(p: *const PfcProblem) -> Result<&'a LoadedConfig, Fail> {
    p.as_ref().map(|p| &p.loaded).ok_or_else(|| null("problem"))
}

fn control_len(l: &LoadedConfig) -> usize {
    l.spec.grid.len() * l.spec.time.steps()
}

fn check_len(l: &LoadedConfig, len: usize, what: &'static str) -> Result<(), Fail> {
    let expected = control_len(l);
    if len != expected {
        return Err(Error::ShapeMismatch {
            what,
            expected,
            found: len,
        }
        .into());
    }
    Ok(())
}

fn to_control(l: &LoadedConfig, data: &[f64]) -> Result<SpaceTimeField, Fail> {
    check_len(l, data.len(), "control")?;
    let grid = &l.spec.grid;
    let levels = data
        .chunks(grid.len())
        .map(|c| Field::from_values(grid, c.to_vec()))
        .collect::<pfcontrol::Result<Vec<_>>>()?;
    Ok(SpaceTimeField::new(levels)?)
}

fn copy_control(u: &SpaceTimeField, out: &mut [f64]) {
    for (chunk, level) in out.chunks_mut(u.level(0).len()).zip(u.levels()) {
        chunk.copy_from_slice(level.values());
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pfc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pfc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a JSON configuration (same schema as the CLI).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfc_problem_from_json(json: *const c_char, out: *mut *mut PfcProblem) -> PfcStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(PfcStatus::InvalidConfig, format!("configuration is not UTF-8: {e}")))?;
        let loaded = parse_config(text)?;
        *out = Box::into_raw(Box::new(PfcProblem { loaded }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`pfc_problem_from_json`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pfc_problem_free(problem: *mut PfcProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of grid cells and of time steps; controls hold `cells * steps`
/// values.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pfc_problem_dims(problem: *const PfcProblem, cells: *mut usize, steps: *mut usize) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        if cells.is_null() || steps.is_null() {
            return Err(null("output"));
        }
        *cells = l.spec.grid.len();
        *steps = l.spec.time.steps();
        Ok(())
    })
}

/// Copies the configured initial control (`control.u0`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pfc_problem_initial_control(problem: *const PfcProblem, out: *mut f64, len: usize) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        check_len(l, len, "output")?;
        copy_control(&l.u0, output(out, len, "out")?);
        Ok(())
    })
}

/// Solves the state equation for control `u`.
///
/// # Safety
/// `u` must point to `len` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfc_solve_state(
    problem: *const PfcProblem,
    u: *const f64,
    len: usize,
    out: *mut *mut PfcTrajectory,
) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let u = to_control(l, input(u, len, "u")?)?;
        let traj = solve_state(&u, &l.spec)?;
        *out = Box::into_raw(Box::new(PfcTrajectory { traj }));
        Ok(())
    })
}

/// # Safety
/// `trajectory` must come from [`pfc_solve_state`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pfc_trajectory_free(trajectory: *mut PfcTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of stored levels (`steps + 1`), or 0 for a null handle.
///
/// # Safety
/// `trajectory` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn pfc_trajectory_levels(trajectory: *const PfcTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.traj.steps() + 1)
}

unsafe fn copy_level(
    trajectory: *const PfcTrajectory,
    level: usize,
    out: *mut f64,
    len: usize,
    pick: fn(&Trajectory) -> &[Field],
) -> PfcStatus {
    guard(|| {
        let t = &trajectory.as_ref().ok_or_else(|| null("trajectory"))?.traj;
        let levels = pick(t);
        let field = levels.get(level).ok_or_else(|| {
            Fail(
                PfcStatus::OutOfRange,
                format!("level {level} out of range (0..={})", levels.len() - 1),
            )
        })?;
        if len != field.len() {
            return Err(Error::ShapeMismatch {
                what: "output",
                expected: field.len(),
                found: len,
            }
            .into());
        }
        output(out, len, "out")?.copy_from_slice(field.values());
        Ok(())
    })
}

/// Copies the temperature-like variable at `level` (`0..=steps`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pfc_trajectory_theta(
    trajectory: *const PfcTrajectory,
    level: usize,
    out: *mut f64,
    len: usize,
) -> PfcStatus {
    copy_level(trajectory, level, out, len, Trajectory::theta)
}

/// Copies the order parameter at `level` (`0..=steps`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pfc_trajectory_phi(
    trajectory: *const PfcTrajectory,
    level: usize,
    out: *mut f64,
    len: usize,
) -> PfcStatus {
    copy_level(trajectory, level, out, len, Trajectory::phi)
}

/// Reduced cost at `u`, and its gradient when `gradient` is non-null.
///
/// # Safety
/// `u` and `gradient` (if non-null) must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pfc_cost_gradient(
    problem: *const PfcProblem,
    u: *const f64,
    len: usize,
    cost: *mut f64,
    gradient: *mut f64,
) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        let u = to_control(l, input(u, len, "u")?)?;
        if gradient.is_null() {
            *cost = reduced_cost(&u, &l.spec)?;
        } else {
            let e = evaluate(&u, &l.spec)?;
            copy_control(&e.gradient, output(gradient, len, "gradient")?);
            *cost = e.cost;
        }
        Ok(())
    })
}

/// Pointwise projection of `u` onto the control box. `out` may alias `u`.
///
/// # Safety
/// `u` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pfc_project_box(problem: *const PfcProblem, u: *const f64, out: *mut f64, len: usize) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        let u = to_control(l, input(u, len, "u")?)?;
        let p = project_box(&u, &l.spec.bounds)?;
        copy_control(&p, output(out, len, "out")?);
        Ok(())
    })
}

/// Runs the projected-gradient optimizer from `u` (the configured optimizer
/// settings apply) and overwrites `u` with the final control. `converged`
/// receives 1 if the stationarity tolerance was reached, else 0; the
/// optional outputs may be null.
///
/// # Safety
/// `u` must point to `len` writable doubles; other pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn pfc_optimize(
    problem: *const PfcProblem,
    u: *mut f64,
    len: usize,
    cost: *mut f64,
    iterations: *mut usize,
    converged: *mut i32,
) -> PfcStatus {
    guard(|| {
        let l = loaded(problem)?;
        let buf = output(u, len, "u")?;
        let u0 = to_control(l, buf)?;
        let opts: OptimizeOptions = l.config.optimizer.options();
        let report = optimize(&l.spec, &u0, &opts)?;
        copy_control(&report.control, buf);
        if let Some(c) = cost.as_mut() {
            *c = report.final_cost();
        }
        if let Some(i) = iterations.as_mut() {
            *i = report.iterations;
        }
        if let Some(c) = converged.as_mut() {
            *c = i32::from(report.termination == Termination::Converged);
        }
        Ok(())
    })
}
