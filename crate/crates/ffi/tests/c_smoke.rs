//! Compiles a C program against the header and the static library when a
//! C compiler and the archive are available; otherwise reports a skip.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "edgesched.h"

int main(void) {
    EsSimulation *sim = NULL;
    if (es_simulation_new("[cluster.clock]\nslots_per_frame = 10\n", 1, 2, &sim) != ES_STATUS_OK) return 1;
    EsFrameMetrics f;
    int frames = 0;
    EsStatus s;
    while ((s = es_simulation_step_frame(sim, &f)) == ES_STATUS_OK) frames++;
    if (s != ES_STATUS_FINISHED) return 2;
    EsRunMetrics run;
    if (es_simulation_run_metrics(sim, &run) != ES_STATUS_OK) return 3;
    es_simulation_free(sim);
    if (es_simulation_new("[workload]\nbase_rate = 0.0\n", 0, 1, &sim) != ES_STATUS_CONFIG) return 4;
    char msg[256];
    es_last_error_message(msg, sizeof msg);
    printf("%d %llu %s\n", frames, (unsigned long long)run.frames, msg);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary> -> target/<profile>/libedgesched_ffi.a
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libedgesched_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        eprintln!("skipped: libedgesched_ffi.a not built for this profile");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipped: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "program exited with {:?}", out.status);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("7 7 config error at `workload.base_rate`"), "{stdout}");
}
