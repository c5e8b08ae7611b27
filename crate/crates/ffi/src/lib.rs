//! C interface to `emloc`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Every fallible call returns an [`EmlocStatus`];
//! on failure [`emloc_last_error`] describes the error for the calling
//! thread. Boundary data cross the boundary as split real and imaginary
//! arrays of length [`emloc_problem_n_control`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use emloc::config::{parse_config, ExperimentConfig};
use emloc::experiment::run_experiment;
use emloc::fem::C64;
use emloc::localization::run_localization;
use emloc::measurement::Problem;
use emloc::mesh::build_box_mesh;
use emloc::solver::find_resonances;
use emloc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmlocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Resonant = 4,
    Residual = 5,
    Io = 6,
    CheckFailed = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Region selector for energy queries.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmlocRegion {
    Target = 0,
    Shielded = 1,
    Observation = 2,
}

/// Parsed, validated experiment configuration.
pub struct EmlocConfig {
    inner: ExperimentConfig,
}

/// Assembled and factorized forward problem for one configuration.
pub struct EmlocProblem {
    problem: Problem,
    m: Vec<usize>,
    d: Vec<usize>,
    o: Vec<usize>,
    length: usize,
    delta: Option<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn status_of(e: &Error) -> EmlocStatus {
    match e {
        Error::InvalidArgument(_) | Error::EmptyGamma(_) | Error::EmptyRegion(_) | Error::DimensionMismatch { .. } => {
            EmlocStatus::InvalidArgument
        }
        Error::EllipticityViolated { .. } | Error::Config(_) => EmlocStatus::Config,
        Error::Resonant { .. } => EmlocStatus::Resonant,
        Error::Residual { .. } => EmlocStatus::Residual,
        Error::Io { .. } => EmlocStatus::Io,
        Error::CheckFailed(_) => EmlocStatus::CheckFailed,
        _ => EmlocStatus::Numerical,
    }
}

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), (EmlocStatus, String)>) -> EmlocStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            EmlocStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EmlocStatus::Panic
        }
    }
}

fn lib(e: Error) -> (EmlocStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (EmlocStatus, String) {
    (EmlocStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (EmlocStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (EmlocStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn boundary_data(
    h: &EmlocProblem,
    re: *const f64,
    im: *const f64,
    len: usize,
) -> Result<Vec<C64>, (EmlocStatus, String)> {
    if re.is_null() {
        return Err(null("re"));
    }
    if len != h.problem.n_control() {
        return Err(lib(Error::DimensionMismatch {
            expected: h.problem.n_control(),
            got: len,
        }));
    }
    let re = std::slice::from_raw_parts(re, len);
    let im = if im.is_null() { None } else { Some(std::slice::from_raw_parts(im, len)) };
    Ok((0..len).map(|i| C64::new(re[i], im.map_or(0.0, |v| v[i]))).collect())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emloc_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn emloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses configuration text. On success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn emloc_config_parse(text: *const c_char, out: *mut *mut EmlocConfig) -> EmlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = c_str(text, "text")?;
        let inner = parse_config(text).map_err(lib)?;
        *out = Box::into_raw(Box::new(EmlocConfig { inner }));
        Ok(())
    })
}

/// Applies a `key=value` override such as `mesh.divisions=[3,3,3]`.
#[no_mangle]
pub unsafe extern "C" fn emloc_config_set(cfg: *mut EmlocConfig, assignment: *const c_char) -> EmlocStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let a = c_str(assignment, "assignment")?;
        cfg.inner.apply_override(a).map_err(lib)
    })
}

/// Canonical TOML text of the configuration. Free with [`emloc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn emloc_config_to_string(cfg: *const EmlocConfig, out: *mut *mut c_char) -> EmlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let s = CString::new(cfg.inner.to_toml()).map_err(|e| (EmlocStatus::Numerical, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn emloc_config_free(cfg: *mut EmlocConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn emloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the configured experiment, writing reports into `out_dir`.
/// `*passed` reports whether every internal check held.
#[no_mangle]
pub unsafe extern "C" fn emloc_run(cfg: *const EmlocConfig, out_dir: *const c_char, passed: *mut bool) -> EmlocStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = c_str(out_dir, "out_dir")?;
        let report = run_experiment(&cfg.inner, Path::new(dir)).map_err(lib)?;
        if !passed.is_null() {
            *passed = report.passed();
        }
        Ok(())
    })
}

/// Cavity resonances below `k_max` on the configured mesh, ascending.
/// Writes at most `capacity` values and the full count to `*count`; returns
/// `BUFFER_TOO_SMALL` when the buffer cannot hold them all.
#[no_mangle]
pub unsafe extern "C" fn emloc_resonances(
    cfg: *const EmlocConfig,
    k_max: f64,
    out: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> EmlocStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        let mesh = Arc::new(build_box_mesh(cfg.inner.mesh, cfg.inner.divisions).map_err(lib)?);
        let spectrum = find_resonances(mesh, &cfg.inner.materials(), k_max).map_err(lib)?;
        let ks = &spectrum.resonances;
        *count = ks.len();
        if !out.is_null() {
            let n = ks.len().min(capacity);
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&ks[..n]);
        }
        if ks.len() > capacity {
            return Err((EmlocStatus::BufferTooSmall, format!("{} resonances, capacity {capacity}", ks.len())));
        }
        Ok(())
    })
}

/// Assembles and factorizes the forward problem with data on the
/// configured boundary patch and selects the M, D and O regions.
#[no_mangle]
pub unsafe extern "C" fn emloc_problem_new(cfg: *const EmlocConfig, out: *mut *mut EmlocProblem) -> EmlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let c = &cfg.as_ref().ok_or_else(|| null("cfg"))?.inner;
        let mesh = Arc::new(build_box_mesh(c.mesh, c.divisions).map_err(lib)?);
        let problem = Problem::new(mesh, &c.materials(), c.k, &c.gamma_spec(), c.solver).map_err(lib)?;
        let select = |b| problem.mesh().select_region(&ExperimentConfig::volume_spec(b)).map_err(lib);
        let (m, d, o) = (select(c.region_m)?, select(c.region_d)?, select(c.region_o)?);
        *out = Box::into_raw(Box::new(EmlocProblem {
            problem,
            m,
            d,
            o,
            length: c.length,
            delta: c.delta,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn emloc_problem_free(p: *mut EmlocProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of boundary coefficients; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn emloc_problem_n_control(p: *const EmlocProblem) -> usize {
    p.as_ref().map_or(0, |h| h.problem.n_control())
}

/// Field energy on a region for boundary data `re + i·im` (`im` may be null).
#[no_mangle]
pub unsafe extern "C" fn emloc_problem_energy(
    p: *const EmlocProblem,
    re: *const f64,
    im: *const f64,
    len: usize,
    region: EmlocRegion,
    energy: *mut f64,
) -> EmlocStatus {
    guard(|| {
        let h = p.as_ref().ok_or_else(|| null("problem"))?;
        if energy.is_null() {
            return Err(null("energy"));
        }
        let f = boundary_data(h, re, im, len)?;
        let tets = match region {
            EmlocRegion::Target => &h.m,
            EmlocRegion::Shielded => &h.d,
            EmlocRegion::Observation => &h.o,
        };
        let fields = h.problem.solve(&f).map_err(lib)?;
        *energy = h.problem.region_energy(tets, &fields).map_err(lib)?;
        Ok(())
    })
}

/// Localized boundary data. Writes the energy ratio to `*lambda` and the
/// target and shielded energies of the configured sequence length into
/// `energy_m` and `energy_d` (each `capacity` long). Optional `f_re`/`f_im`
/// receive the first sequence element (length `n_control`).
#[no_mangle]
pub unsafe extern "C" fn emloc_problem_localize(
    p: *const EmlocProblem,
    lambda: *mut f64,
    energy_m: *mut f64,
    energy_d: *mut f64,
    capacity: usize,
    f_re: *mut f64,
    f_im: *mut f64,
) -> EmlocStatus {
    guard(|| {
        let h = p.as_ref().ok_or_else(|| null("problem"))?;
        if lambda.is_null() || energy_m.is_null() || energy_d.is_null() {
            return Err(null("lambda/energy_m/energy_d"));
        }
        if capacity < h.length {
            return Err((EmlocStatus::BufferTooSmall, format!("sequence length {}, capacity {capacity}", h.length)));
        }
        let r = run_localization(&h.problem, &h.m, &h.d, h.length, h.delta).map_err(lib)?;
        *lambda = r.lambda;
        for (i, t) in r.terms.iter().enumerate() {
            *energy_m.add(i) = t.energy_m;
            *energy_d.add(i) = t.energy_d;
        }
        if let Some(first) = r.terms.first() {
            for (i, v) in first.f.iter().enumerate() {
                if !f_re.is_null() {
                    *f_re.add(i) = v.re;
                }
                if !f_im.is_null() {
                    *f_im.add(i) = v.im;
                }
            }
        }
        Ok(())
    })
}
