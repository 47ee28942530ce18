//! C interface to the engine.
//!
//! Every function returns a `HompnpStatus` and writes results through
//! out-pointers. Handles are opaque and owned by the caller, who releases
//! them with the matching `_free`. No panic crosses the boundary. The message
//! of the most recent failure on the calling thread is kept for
//! `hompnp_last_error_message`.
//!
//! Pointer arguments must be null or valid for the access described on each
//! function; handles must come from this library and not have been freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hompnp::cell_problem::{compute_effective_tensor, EffectiveTensor};
use hompnp::config::{parse_and_validate, RunConfig};
use hompnp::homogenized::MacroProblem;
use hompnp::micro::MicroProblem;
use hompnp::nonlinearity::{h_p_eval, psi_eval, Nonlinearity};
use hompnp::output::diagnostics_csv;
use hompnp::transport::RunOutput;
use hompnp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HompnpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Geometry = 4,
    Incompatible = 5,
    Solver = 6,
    /// The run stopped early; the run handle still holds the partial results.
    RunFailed = 7,
    Io = 8,
    OutOfRange = 9,
    BufferTooSmall = 10,
    Domain = 11,
    Panic = 99,
}

/// Validated configuration.
pub struct HompnpConfig {
    inner: RunConfig,
}

/// Effective tensor of a configuration's unit cell.
pub struct HompnpTensor {
    inner: EffectiveTensor,
}

/// Time series and final state of one run.
pub struct HompnpRun {
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> HompnpStatus {
    match err {
        Error::Config(_) | Error::Expression { .. } | Error::Json(_) => HompnpStatus::Config,
        Error::Geometry(_) | Error::Alignment { .. } => HompnpStatus::Geometry,
        Error::Domain(_) => HompnpStatus::Domain,
        Error::Incompatible { .. } => HompnpStatus::Incompatible,
        Error::Solver(_) => HompnpStatus::Solver,
        Error::Io(_) => HompnpStatus::Io,
        Error::NegativeConcentration { .. }
        | Error::StepFloor { .. }
        | Error::StateCorruption { .. }
        | Error::Harness(_)
        | Error::Verification(_) => HompnpStatus::RunFailed,
    }
}

fn fail(err: Error) -> HompnpStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_with(status: HompnpStatus, msg: &str) -> HompnpStatus {
    set_error(msg.to_string());
    status
}

/// Runs `f`, converting panics into `HompnpStatus::Panic`.
fn guard<F: FnOnce() -> HompnpStatus>(f: F) -> HompnpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail_with(HompnpStatus::Panic, &format!("internal panic: {msg}"))
        }
    }
}

/// Copies `text` plus a NUL into `buf` when it fits; `needed` receives the
/// full size. A null `buf` only queries the size.
unsafe fn copy_text(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> HompnpStatus {
    let size = text.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buf.is_null() {
        return HompnpStatus::Ok;
    }
    if len < size {
        return fail_with(HompnpStatus::BufferTooSmall, "output buffer is too small");
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
    *buf.add(text.len()) = 0;
    HompnpStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hompnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message (truncated to fit, always
/// NUL-terminated when `len > 0`) and returns its full size including the NUL.
/// `buf` is null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Parses and validates a JSON configuration document.
/// `json` is a NUL-terminated string; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_config_parse(
    json: *const c_char,
    out: *mut *mut HompnpConfig,
) -> HompnpStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *out = std::ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail_with(HompnpStatus::InvalidUtf8, "configuration is not UTF-8");
        };
        match parse_and_validate(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(HompnpConfig { inner: cfg }));
                HompnpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// `cfg` is null or a handle from `hompnp_config_parse` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hompnp_config_free(cfg: *mut HompnpConfig) {
    if !cfg.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(cfg))));
    }
}

/// Constant added to the outer surface charge to balance the data.
/// `cfg` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_config_balance_shift(
    cfg: *const HompnpConfig,
    out: *mut f64,
) -> HompnpStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *out = (*cfg).inner.balance_shift;
        HompnpStatus::Ok
    })
}

/// Solves the cell problems of the configured inclusion.
/// `cfg` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_cell_tensor(
    cfg: *const HompnpConfig,
    out: *mut *mut HompnpTensor,
) -> HompnpStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *out = std::ptr::null_mut();
        let cfg = &(*cfg).inner;
        match compute_effective_tensor(&cfg.cell, cfg.doc.solver.cell_tol) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(HompnpTensor { inner: t }));
                HompnpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Entry `(i, j)` of the mean-flux tensor.
/// `t` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_tensor_get(
    t: *const HompnpTensor,
    i: usize,
    j: usize,
    out: *mut f64,
) -> HompnpStatus {
    guard(|| {
        if t.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        let a = &(*t).inner.a_hom;
        if i >= a.dim || j >= a.dim {
            return fail_with(HompnpStatus::OutOfRange, "tensor index out of range");
        }
        *out = a.m[i][j];
        HompnpStatus::Ok
    })
}

/// `t` is a live handle; `dim` and `porosity` are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_tensor_info(
    t: *const HompnpTensor,
    dim: *mut usize,
    porosity: *mut f64,
) -> HompnpStatus {
    guard(|| {
        if t.is_null() || dim.is_null() || porosity.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *dim = (*t).inner.a_hom.dim;
        *porosity = (*t).inner.porosity;
        HompnpStatus::Ok
    })
}

/// `t` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hompnp_tensor_free(t: *mut HompnpTensor) {
    if !t.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(t))));
    }
}

unsafe fn store_run(result: hompnp::Result<RunOutput>, out: *mut *mut HompnpRun) -> HompnpStatus {
    match result {
        Ok(output) => {
            let failure = output.failure.clone();
            *out = Box::into_raw(Box::new(HompnpRun { output }));
            match failure {
                Some(msg) => fail_with(HompnpStatus::RunFailed, &msg),
                None => HompnpStatus::Ok,
            }
        }
        Err(e) => fail(e),
    }
}

/// Runs the micro model on the configured perforated grid. On
/// `HOMPNP_STATUS_RUN_FAILED` the handle is still set and holds the partial run.
/// `cfg` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_micro(
    cfg: *const HompnpConfig,
    out: *mut *mut HompnpRun,
) -> HompnpStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *out = std::ptr::null_mut();
        let cfg = &(*cfg).inner;
        let result = MicroProblem::new(cfg, cfg.m())
            .and_then(|p| p.run(cfg.doc.solver.explicit_time, false));
        store_run(result, out)
    })
}

/// Runs the homogenized model; see `hompnp_run_micro` for failure handling.
/// `cfg` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_macro(
    cfg: *const HompnpConfig,
    out: *mut *mut HompnpRun,
) -> HompnpStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        *out = std::ptr::null_mut();
        let cfg = &(*cfg).inner;
        let s = &cfg.doc.solver;
        let result = MacroProblem::new(cfg, cfg.macro_resolution())
            .and_then(|p| p.run(s.explicit_time, s.poisson_every_step, false));
        store_run(result, out)
    })
}

/// Number of recorded output times, species and fluid cells.
/// `run` is a live handle; the out-pointers are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_shape(
    run: *const HompnpRun,
    samples: *mut usize,
    species: *mut usize,
    cells: *mut usize,
) -> HompnpStatus {
    guard(|| {
        if run.is_null() || samples.is_null() || species.is_null() || cells.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        let out = &(*run).output;
        *samples = out.samples.len();
        *species = out.final_state.conc.len();
        *cells = out.final_state.phi.len();
        HompnpStatus::Ok
    })
}

/// Time, energy and mass of `species` at output `k`.
/// `run` is a live handle; the out-pointers are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_sample(
    run: *const HompnpRun,
    k: usize,
    species: usize,
    t: *mut f64,
    energy: *mut f64,
    mass: *mut f64,
) -> HompnpStatus {
    guard(|| {
        if run.is_null() || t.is_null() || energy.is_null() || mass.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        let run = &*run;
        let Some(s) = run.output.samples.get(k) else {
            return fail_with(HompnpStatus::OutOfRange, "sample index out of range");
        };
        let Some(&m) = s.mass.get(species) else {
            return fail_with(HompnpStatus::OutOfRange, "species index out of range");
        };
        *t = s.t;
        *energy = s.energy;
        *mass = m;
        HompnpStatus::Ok
    })
}

/// Copies the final concentration of `species` (fluid cells in grid order).
/// `run` is a live handle; `buf` is valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_final_concentration(
    run: *const HompnpRun,
    species: usize,
    buf: *mut f64,
    len: usize,
) -> HompnpStatus {
    guard(|| {
        if run.is_null() || buf.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        let run = &*run;
        let Some(c) = run.output.final_state.conc.get(species) else {
            return fail_with(HompnpStatus::OutOfRange, "species index out of range");
        };
        if len < c.len() {
            return fail_with(HompnpStatus::BufferTooSmall, "output buffer is too small");
        }
        std::ptr::copy_nonoverlapping(c.as_ptr(), buf, c.len());
        HompnpStatus::Ok
    })
}

/// Copies the final potential (fluid cells in grid order).
/// `run` is a live handle; `buf` is valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_final_potential(
    run: *const HompnpRun,
    buf: *mut f64,
    len: usize,
) -> HompnpStatus {
    guard(|| {
        if run.is_null() || buf.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        let phi = &(*run).output.final_state.phi;
        if len < phi.len() {
            return fail_with(HompnpStatus::BufferTooSmall, "output buffer is too small");
        }
        std::ptr::copy_nonoverlapping(phi.as_ptr(), buf, phi.len());
        HompnpStatus::Ok
    })
}

/// The diagnostics time series as CSV text (same layout as the CLI writes).
/// `run` is a live handle; `buf` is null or valid for `len` bytes; `needed`
/// is null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_diagnostics_csv(
    run: *const HompnpRun,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> HompnpStatus {
    guard(|| {
        if run.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        copy_text(&diagnostics_csv(&(*run).output.samples), buf, len, needed)
    })
}

/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hompnp_run_free(run: *mut HompnpRun) {
    if !run.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(run))));
    }
}

/// `h_p(r) = r + eta r^p` for `r >= 0`, `eta > 0`, `p >= 4`.
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_h_p(r: f64, eta: f64, p: f64, out: *mut f64) -> HompnpStatus {
    guard(|| {
        if out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        match Nonlinearity::new(eta, p).and_then(|_| h_p_eval(r, eta, p)) {
            Ok(v) => {
                *out = v;
                HompnpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Entropy density `Psi(r) = r ln r - r + 1 + eta/(p-1) r^p`.
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hompnp_psi(r: f64, eta: f64, p: f64, out: *mut f64) -> HompnpStatus {
    guard(|| {
        if out.is_null() {
            return fail_with(HompnpStatus::NullPointer, "null argument");
        }
        match Nonlinearity::new(eta, p).and_then(|_| psi_eval(r, eta, p)) {
            Ok(v) => {
                *out = v;
                HompnpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
