//! C interface to the simulator.
//!
//! A simulation is an opaque handle created from a TOML configuration
//! (or the desk defaults), advanced one frame at a time and destroyed with
//! `es_simulation_free`. Every fallible function returns an `EsStatus`;
//! on failure the message is kept per thread and can be copied out with
//! `es_last_error_message`. Panics never cross the boundary; they surface
//! as `ES_STATUS_PANIC`.
//!
//! Handles are not thread-safe: use each from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use edgesched::experiment::{workload, Agents, ExperimentConfig, Simulation};
use edgesched::metrics::{FrameMetrics, RunMetrics};
use edgesched::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Validation = 4,
    Parse = 5,
    Contract = 6,
    InvalidAction = 7,
    Incompatible = 8,
    Io = 9,
    /// Every planned frame has already been simulated.
    Finished = 10,
    Panic = 11,
}

/// Per-frame metrics, field for field the per-frame CSV row.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EsFrameMetrics {
    pub frame: u64,
    pub arrived: u64,
    pub completed_edge: u64,
    pub completed_cloud: u64,
    pub dropped: u64,
    pub phi_f: f64,
    pub cost_kb: u64,
    pub image_mb: f64,
    pub util_mean: f64,
    pub util_std: f64,
    pub reward_mean: f64,
}

impl From<&FrameMetrics> for EsFrameMetrics {
    fn from(f: &FrameMetrics) -> Self {
        Self {
            frame: f.frame,
            arrived: f.arrived,
            completed_edge: f.completed_edge,
            completed_cloud: f.completed_cloud,
            dropped: f.dropped,
            phi_f: f.phi_f,
            cost_kb: f.cost_kb,
            image_mb: f.image_mb,
            util_mean: f.util_mean,
            util_std: f.util_std,
            reward_mean: f.reward_mean,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EsRunMetrics {
    pub arrived: u64,
    pub completed: u64,
    pub dropped: u64,
    pub phi_prime: f64,
    pub cost_kb: u64,
    pub image_mb: f64,
    pub frames: u64,
}

impl From<&RunMetrics> for EsRunMetrics {
    fn from(r: &RunMetrics) -> Self {
        Self {
            arrived: r.arrived,
            completed: r.completed,
            dropped: r.dropped,
            phi_prime: r.phi_prime,
            cost_kb: r.cost_kb,
            image_mb: r.image_mb,
            frames: r.frames,
        }
    }
}

/// Opaque simulation handle.
pub struct EsSimulation {
    sim: Simulation,
    total_frames: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EsStatus {
    match err {
        Error::Parse { .. } => EsStatus::Parse,
        Error::Validation(_) => EsStatus::Validation,
        Error::Contract(_) => EsStatus::Contract,
        Error::InvalidAction { .. } => EsStatus::InvalidAction,
        Error::Config { .. } => EsStatus::Config,
        Error::Incompatible(_) => EsStatus::Incompatible,
        Error::Io(_) | Error::Csv(_) => EsStatus::Io,
    }
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), (EsStatus, String)>) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => EsStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("panic: {message}"));
            EsStatus::Panic
        }
    }
}

fn lift(err: Error) -> (EsStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (EsStatus, String) {
    (EsStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn read_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, (EsStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| (EsStatus::InvalidUtf8, format!("`{name}` is not UTF-8: {e}")))
}

/// Creates a simulation of `frames` frames of synthesized arrivals (plus the
/// configured drain) with greedy-mode policies and fresh networks.
/// `config_toml` may be null for the desk defaults. `seed` replaces the
/// configuration's seed.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be a
/// valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_new(
    config_toml: *const c_char,
    seed: u64,
    frames: u64,
    out: *mut *mut EsSimulation,
) -> EsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let mut cfg = if config_toml.is_null() {
            ExperimentConfig::desk()
        } else {
            ExperimentConfig::from_toml(read_str(config_toml, "config_toml")?).map_err(lift)?
        };
        cfg.seed = seed;
        if frames == 0 {
            return Err((EsStatus::Contract, "frames must be positive".into()));
        }
        let requests = workload(&cfg, frames, 1.0, seed).map_err(lift)?;
        let agents = Agents::new(&cfg).map_err(lift)?;
        let total_frames = frames + cfg.training.drain_frames;
        let sim = Simulation::new(&cfg, requests, agents, total_frames, false, false).map_err(lift)?;
        *out = Box::into_raw(Box::new(EsSimulation { sim, total_frames }));
        Ok(())
    })
}

/// Replaces the learned networks with checkpoints from a training run.
/// Only allowed before the first frame.
///
/// # Safety
/// `sim` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_load_checkpoints(sim: *mut EsSimulation, dir: *const c_char) -> EsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let dir = read_str(dir, "dir")?;
        if sim.sim.frames_done() > 0 {
            return Err((EsStatus::Contract, "checkpoints must be loaded before the first frame".into()));
        }
        sim.sim.agents_mut().load(Path::new(dir)).map_err(lift)
    })
}

/// Simulates the next frame and writes its metrics to `out` (may be null).
/// Returns `ES_STATUS_FINISHED` once every planned frame has run.
///
/// # Safety
/// `sim` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_step_frame(sim: *mut EsSimulation, out: *mut EsFrameMetrics) -> EsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        if sim.sim.frames_done() >= sim.total_frames {
            return Err((EsStatus::Finished, "all frames simulated".into()));
        }
        let frame = sim.sim.step_frame().map_err(lift)?;
        if let Some(out) = out.as_mut() {
            *out = EsFrameMetrics::from(&frame);
        }
        Ok(())
    })
}

/// Frames the handle will simulate in total, drain included; 0 for null.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_total_frames(sim: *const EsSimulation) -> u64 {
    sim.as_ref().map_or(0, |s| s.total_frames)
}

/// Totals over the frames simulated so far.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_run_metrics(sim: *const EsSimulation, out: *mut EsRunMetrics) -> EsStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = EsRunMetrics::from(sim.sim.run_metrics());
        Ok(())
    })
}

/// Destroys a handle; null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from `es_simulation_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_simulation_free(sim: *mut EsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Length in bytes of the calling thread's last error message, without
/// the terminating NUL; 0 if there is none.
#[no_mangle]
pub extern "C" fn es_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes().len()))
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes) and returns the number of bytes copied, excluding NUL.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn es_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let guard = e.borrow();
        let bytes = guard.as_ref().map_or(&[][..], |m| m.as_bytes());
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn es_status_name(status: EsStatus) -> *const c_char {
    let name: &'static str = match status {
        EsStatus::Ok => "ok\0",
        EsStatus::NullPointer => "null pointer\0",
        EsStatus::InvalidUtf8 => "invalid utf-8\0",
        EsStatus::Config => "config error\0",
        EsStatus::Validation => "validation error\0",
        EsStatus::Parse => "parse error\0",
        EsStatus::Contract => "contract violation\0",
        EsStatus::InvalidAction => "invalid action\0",
        EsStatus::Incompatible => "incompatible checkpoint\0",
        EsStatus::Io => "i/o error\0",
        EsStatus::Finished => "finished\0",
        EsStatus::Panic => "panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Library version, NUL-terminated.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
