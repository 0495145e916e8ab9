//! Compiles and runs a C program against the generated header and static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "cropda.h"

int main(void) {
    if (strlen(cropda_version()) == 0) return 1;
    if (fabs(cropda_gaspari_cohn(10.0, 10.0) - 5.0 / 24.0) > 1e-12) return 2;
    CropdaExperiment *exp = NULL;
    if (cropda_experiment_new("soybean", NULL, &exp) != CROPDA_STATUS_OK) return 3;
    CropdaSeason *season = NULL;
    if (cropda_season_generate(exp, 0, &season) != CROPDA_STATUS_OK) return 4;
    size_t n = cropda_season_n_days(season);
    double truth[400], est[400];
    if (n > 400) return 5;
    if (cropda_season_truth(season, truth, n) != CROPDA_STATUS_OK) return 6;
    if (cropda_run(exp, season, CROPDA_METHOD_ENKF, NULL, est, n) != CROPDA_STATUS_OK) return 7;
    CropdaMetrics m;
    if (cropda_metrics(truth, est, n, &m) != CROPDA_STATUS_OK) return 8;
    if (cropda_experiment_new(NULL, NULL, &exp) != CROPDA_STATUS_NULL_POINTER) return 9;
    if (strlen(cropda_last_error()) == 0) return 10;
    printf("%zu %.6f\n", n, m.rmse);
    cropda_season_free(season);
    cropda_experiment_free(exp);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cropda.h")).unwrap();
    for name in [
        "cropda_version",
        "cropda_last_error",
        "cropda_experiment_new",
        "cropda_season_generate",
        "cropda_season_load",
        "cropda_run",
        "cropda_emulator_train",
        "cropda_emulator_load",
        "cropda_gaspari_cohn",
        "cropda_metrics",
        "typedef struct CropdaExperiment CropdaExperiment;",
        "CROPDA_STATUS_BUFFER_TOO_SMALL = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libcropda_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("168 "), "{text}");
}
