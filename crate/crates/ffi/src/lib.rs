//! C interface to `ocstab`.
//!
//! Problems and solutions are opaque handles created and destroyed by this
//! library. Every fallible call returns an [`OcstabStatus`]; on failure the
//! message is kept per thread and read with [`ocstab_last_error`]. Nodal
//! arrays use the node order of the mesh, see [`ocstab_problem_nodes`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ocstab::cli::{parse_config, parse_config_str, ExperimentConfig};
use ocstab::optimizer::{optimize, InitialGuess, OptimizeResult};
use ocstab::{ControlPoint, Error, NodalField, Perturbation, ProblemData};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OcstabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A discretized control problem built from a TOML experiment config.
pub struct OcstabProblem {
    config: ExperimentConfig,
    problem: ProblemData,
}

/// Result of `ocstab_solve_control`.
pub struct OcstabSolution {
    result: OptimizeResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior NULs were removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OcstabStatus {
    match e {
        Error::Config { .. }
        | Error::Assumption(_)
        | Error::NonFinite { .. }
        | Error::Io(_) => OcstabStatus::Config,
        Error::InvalidInput(_) | Error::MeshMismatch { .. } => OcstabStatus::InvalidArgument,
        _ => OcstabStatus::Solver,
    }
}

/// Runs `f`, recording errors and panics for `ocstab_last_error`.
fn guard(f: impl FnOnce() -> Result<(), OcstabStatusWithMessage>) -> OcstabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OcstabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OcstabStatus::Panic
        }
    }
}

type OcstabStatusWithMessage = (OcstabStatus, String);

fn lib_err(e: Error) -> OcstabStatusWithMessage {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> OcstabStatusWithMessage {
    (OcstabStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn ref_or<'a, T>(p: *const T, name: &str) -> Result<&'a T, OcstabStatusWithMessage> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, OcstabStatusWithMessage> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            OcstabStatus::InvalidArgument,
            format!("`{name}` is not valid UTF-8"),
        )
    })
}

unsafe fn nodal_arg(
    problem: &ProblemData,
    p: *const f64,
    len: usize,
    name: &str,
) -> Result<NodalField, OcstabStatusWithMessage> {
    if p.is_null() {
        return Err(null(name));
    }
    let values = std::slice::from_raw_parts(p, len).to_vec();
    problem.mesh().field(values).map_err(lib_err)
}

unsafe fn write_out(
    src: &[f64],
    out: *mut f64,
    len: usize,
    name: &str,
) -> Result<(), OcstabStatusWithMessage> {
    if out.is_null() {
        return Err(null(name));
    }
    if len < src.len() {
        return Err((
            OcstabStatus::BufferTooSmall,
            format!("`{name}` holds {len} values, need {}", src.len()),
        ));
    }
    std::slice::from_raw_parts_mut(out, src.len()).copy_from_slice(src);
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), OcstabStatusWithMessage> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn build(config: ExperimentConfig) -> Result<Box<OcstabProblem>, OcstabStatusWithMessage> {
    let problem = config.problem().map_err(lib_err)?;
    Ok(Box::new(OcstabProblem { config, problem }))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length plus one, or 0
/// if there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ocstab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ocstab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a problem from TOML config text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocstab_problem_from_toml(
    toml: *const c_char,
    out: *mut *mut OcstabProblem,
) -> OcstabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let handle = build(parse_config_str(text).map_err(lib_err)?)?;
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Builds a problem from a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocstab_problem_from_file(
    path: *const c_char,
    out: *mut *mut OcstabProblem,
) -> OcstabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let handle = build(parse_config(Path::new(path)).map_err(lib_err)?)?;
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Releases a problem; null is ignored.
///
/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ocstab_problem_free(problem: *mut OcstabProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of mesh nodes, the length of every nodal array.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ocstab_problem_node_count(
    problem: *const OcstabProblem,
    out: *mut usize,
) -> OcstabStatus {
    guard(|| {
        let p = ref_or(problem, "problem")?;
        put(out, p.problem.mesh().node_count(), "out")
    })
}

/// Node coordinates as `x1, x2` pairs; `len` must be at least twice the
/// node count.
///
/// # Safety
/// `xy` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ocstab_problem_nodes(
    problem: *const OcstabProblem,
    xy: *mut f64,
    len: usize,
) -> OcstabStatus {
    guard(|| {
        let p = ref_or(problem, "problem")?;
        let flat: Vec<f64> = p.problem.mesh().nodes().iter().flatten().copied().collect();
        write_out(&flat, xy, len, "xy")
    })
}

/// Solves the state equation for the nodal control `u`.
///
/// # Safety
/// `u` must hold `len` doubles and `y` must have room for `len` doubles;
/// `newton_iters` may be null.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solve_state(
    problem: *const OcstabProblem,
    u: *const f64,
    y: *mut f64,
    len: usize,
    newton_iters: *mut usize,
) -> OcstabStatus {
    guard(|| {
        let p = &ref_or(problem, "problem")?.problem;
        let u = nodal_arg(p, u, len, "u")?;
        let (state, report) =
            ocstab::pde::solve_state(p.mesh(), p.coeffs(), &u, None, &p.newton).map_err(lib_err)?;
        write_out(&state.values, y, len, "y")?;
        if !newton_iters.is_null() {
            *newton_iters = report.iterations;
        }
        Ok(())
    })
}

/// Objective value and gradient density `phi + g` at an admissible `u`.
/// `gradient` may be null.
///
/// # Safety
/// `u` must hold `len` doubles, `gradient` (if not null) room for `len`.
#[no_mangle]
pub unsafe extern "C" fn ocstab_objective(
    problem: *const OcstabProblem,
    u: *const f64,
    len: usize,
    value: *mut f64,
    gradient: *mut f64,
) -> OcstabStatus {
    guard(|| {
        let p = &ref_or(problem, "problem")?.problem;
        let u = nodal_arg(p, u, len, "u")?;
        let point = ControlPoint::new(p, &u, &Perturbation::none()).map_err(lib_err)?;
        put(value, point.pack.j_value, "value")?;
        if !gradient.is_null() {
            write_out(&point.pack.gradient_density.values, gradient, len, "gradient")?;
        }
        Ok(())
    })
}

/// Solves the control problem from random starts drawn with `seed`. A run
/// that does not reach the stationarity tolerance still returns a
/// solution; check `ocstab_solution_converged`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solve_control(
    problem: *const OcstabProblem,
    seed: u64,
    out: *mut *mut OcstabSolution,
) -> OcstabStatus {
    guard(|| {
        let p = ref_or(problem, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = p.config.optimizer_config();
        cfg.rng_seed = seed;
        let result = optimize(&p.problem, &Perturbation::none(), &cfg, &InitialGuess::Random)
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(OcstabSolution { result }));
        Ok(())
    })
}

/// Releases a solution; null is ignored.
///
/// # Safety
/// `solution` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solution_free(solution: *mut OcstabSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Objective value, stationarity residual and convergence flag; any
/// output pointer may be null.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solution_summary(
    solution: *const OcstabSolution,
    objective: *mut f64,
    residual: *mut f64,
    converged: *mut bool,
) -> OcstabStatus {
    guard(|| {
        let r = &ref_or(solution, "solution")?.result;
        if !objective.is_null() {
            *objective = r.pack.j_value;
        }
        if !residual.is_null() {
            *residual = r.stationarity_residual;
        }
        if !converged.is_null() {
            *converged = r.converged;
        }
        Ok(())
    })
}

/// Optimal control at the nodes.
///
/// # Safety
/// `u` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solution_control(
    solution: *const OcstabSolution,
    u: *mut f64,
    len: usize,
) -> OcstabStatus {
    guard(|| {
        let r = &ref_or(solution, "solution")?.result;
        write_out(&r.u_star.values, u, len, "u")
    })
}

/// Optimal state at the nodes.
///
/// # Safety
/// `y` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ocstab_solution_state(
    solution: *const OcstabSolution,
    y: *mut f64,
    len: usize,
) -> OcstabStatus {
    guard(|| {
        let r = &ref_or(solution, "solution")?.result;
        write_out(&r.pack.y.values, y, len, "y")
    })
}
