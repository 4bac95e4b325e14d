use std::ffi::{CStr, CString};
use std::ptr;

use edgesched::experiment::{run_training, write_training, ExperimentConfig};
use edgesched_ffi::*;

const SMALL: &str = "[cluster.clock]\nslots_per_frame = 20\n[training]\ndrain_frames = 2\n";

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; es_last_error_length() + 1];
    let n = unsafe { es_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(n, s.len());
    s
}

fn new_sim(config: Option<&str>, seed: u64, frames: u64) -> Result<*mut EsSimulation, EsStatus> {
    let text = config.map(|c| CString::new(c).unwrap());
    let mut sim = ptr::null_mut();
    let status = unsafe { es_simulation_new(text.as_ref().map_or(ptr::null(), |t| t.as_ptr()), seed, frames, &mut sim) };
    if status == EsStatus::Ok {
        assert!(!sim.is_null());
        Ok(sim)
    } else {
        assert!(sim.is_null());
        Err(status)
    }
}

fn run_all(sim: *mut EsSimulation) -> Vec<EsFrameMetrics> {
    let mut frames = Vec::new();
    loop {
        let mut f = EsFrameMetrics::default();
        match unsafe { es_simulation_step_frame(sim, &mut f) } {
            EsStatus::Ok => frames.push(f),
            EsStatus::Finished => return frames,
            other => panic!("step failed: {other:?} {}", last_error()),
        }
    }
}

#[test]
fn lifecycle_runs_every_frame_and_resolves_requests() {
    let sim = new_sim(Some(SMALL), 3, 4).unwrap();
    assert_eq!(unsafe { es_simulation_total_frames(sim) }, 6);
    let frames = run_all(sim);
    assert_eq!(frames.len(), 6);
    assert_eq!(frames.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    let mut run = EsRunMetrics::default();
    assert_eq!(unsafe { es_simulation_run_metrics(sim, &mut run) }, EsStatus::Ok);
    assert_eq!(run.frames, 6);
    assert_eq!(run.arrived, frames.iter().map(|f| f.arrived).sum::<u64>());
    assert!(run.arrived > 0);
    assert!(run.phi_prime >= 0.0 && run.phi_prime <= 1.0);
    unsafe { es_simulation_free(sim) };
}

#[test]
fn identical_inputs_give_identical_frames() {
    let a = new_sim(Some(SMALL), 11, 3).unwrap();
    let b = new_sim(Some(SMALL), 11, 3).unwrap();
    assert_eq!(run_all(a), run_all(b));
    unsafe {
        es_simulation_free(a);
        es_simulation_free(b);
    }
}

#[test]
fn null_config_uses_desk_defaults() {
    let sim = new_sim(None, 0, 1).unwrap();
    assert_eq!(unsafe { es_simulation_total_frames(sim) }, 1 + ExperimentConfig::desk().training.drain_frames);
    unsafe { es_simulation_free(sim) };
}

#[test]
fn errors_map_to_status_codes_with_messages() {
    assert_eq!(new_sim(Some("[workload]\nbase_rate = -1.0\n"), 0, 2).unwrap_err(), EsStatus::Config);
    assert!(last_error().contains("workload.base_rate"));
    assert_eq!(new_sim(Some("not toml ["), 0, 2).unwrap_err(), EsStatus::Config);
    assert_eq!(new_sim(Some(SMALL), 0, 0).unwrap_err(), EsStatus::Contract);

    assert_eq!(unsafe { es_simulation_new(ptr::null(), 0, 1, ptr::null_mut()) }, EsStatus::NullPointer);
    assert_eq!(unsafe { es_simulation_step_frame(ptr::null_mut(), ptr::null_mut()) }, EsStatus::NullPointer);
    assert!(last_error().contains("sim"));
    let mut run = EsRunMetrics::default();
    assert_eq!(unsafe { es_simulation_run_metrics(ptr::null(), &mut run) }, EsStatus::NullPointer);
    assert_eq!(unsafe { es_simulation_total_frames(ptr::null()) }, 0);
    unsafe { es_simulation_free(ptr::null_mut()) };

    let bad = [0x66u8, 0xff, 0x00];
    let mut sim = ptr::null_mut();
    let status = unsafe { es_simulation_new(bad.as_ptr() as *const _, 0, 1, &mut sim) };
    assert_eq!(status, EsStatus::InvalidUtf8);
}

#[test]
fn message_copy_truncates_and_terminates() {
    new_sim(Some("[workload]\nbase_rate = -1.0\n"), 0, 2).unwrap_err();
    let full = last_error();
    let mut small = [1 as std::ffi::c_char; 5];
    let n = unsafe { es_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, 4);
    assert_eq!(small[4], 0);
    let prefix = unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap();
    assert!(full.starts_with(prefix));
    assert_eq!(unsafe { es_last_error_message(ptr::null_mut(), 10) }, 0);
}

#[test]
fn checkpoints_load_only_when_compatible_and_before_running() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.training.episodes = 0;
    let trained = run_training(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_training(dir.path(), &trained).unwrap();
    let ckpt = CString::new(dir.path().join("checkpoints").to_str().unwrap()).unwrap();

    let sim = new_sim(Some(SMALL), 0, 2).unwrap();
    assert_eq!(unsafe { es_simulation_load_checkpoints(sim, ckpt.as_ptr()) }, EsStatus::Ok);
    assert_eq!(unsafe { es_simulation_step_frame(sim, ptr::null_mut()) }, EsStatus::Ok);
    assert_eq!(unsafe { es_simulation_load_checkpoints(sim, ckpt.as_ptr()) }, EsStatus::Contract);
    unsafe { es_simulation_free(sim) };

    let other = format!("{SMALL}[cmmac]\nactor_hidden = [8]\n");
    let sim = new_sim(Some(&other), 0, 2).unwrap();
    assert_eq!(unsafe { es_simulation_load_checkpoints(sim, ckpt.as_ptr()) }, EsStatus::Incompatible);
    let missing = CString::new("/nonexistent/checkpoints").unwrap();
    assert_eq!(unsafe { es_simulation_load_checkpoints(sim, missing.as_ptr()) }, EsStatus::Io);
    unsafe { es_simulation_free(sim) };
}

#[test]
fn status_names_and_version_are_static_strings() {
    let name = unsafe { CStr::from_ptr(es_status_name(EsStatus::Finished)) };
    assert_eq!(name.to_str().unwrap(), "finished");
    let version = unsafe { CStr::from_ptr(es_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
