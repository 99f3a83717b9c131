use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "indist.h"

int main(void) {
    double tau[2001];
    for (int k = 0; k < 2001; ++k) tau[k] = (k - 1000) * 0.05e-9;
    const double g1 = 2 * M_PI * 40e6, gpd = 2 * M_PI * 15e6;
    IndistCurve *par = NULL, *perp = NULL;
    if (indist_cw_g2(tau, 2001, g1, gpd, 1.3, 1.0, 1.0, &par) != INDIST_STATUS_OK) return 1;
    if (indist_cw_g2(tau, 2001, g1, gpd, 1.3, 1.0, 0.0, &perp) != INDIST_STATUS_OK) return 1;
    IndistResult r;
    if (indist_cw_integral_extract(par, perp, 0.0, &r) != INDIST_STATUS_OK) return 2;
    indist_curve_free(par);
    indist_curve_free(perp);
    IndistEmitter *e = NULL;
    if (indist_emitter_two_level(-1.0, gpd, 1.0, &e) != INDIST_STATUS_INVALID_ARGUMENT) return 3;
    if (indist_last_error() == NULL) return 4;
    printf("%s %.6f\n", indist_version(), r.value);
    return fabs(r.value - indist_i_tilde_analytic(1.3, g1, gpd, 1.0)) < 1e-4 ? 0 : 5;
}
"#;

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_is_committed_and_valid_c() {
    let header = manifest().join("include/indist.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "indist_version",
        "indist_last_error",
        "indist_curve_free",
        "INDIST_STATUS_PANIC",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, PROGRAM).unwrap();
    for std in ["-std=c99", "-std=c11"] {
        let out = Command::new(cc())
            .args([
                std,
                "-Wall",
                "-Wextra",
                "-Werror",
                "-fsyntax-only",
                "-D_DEFAULT_SOURCE",
            ])
            .arg("-I")
            .arg(manifest().join("include"))
            .arg(&src)
            .output()
            .expect("C compiler available");
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

/// Directory holding the library artifacts of this build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = artifact_dir().join("libindist_ffi.so");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    let exe = dir.path().join("use");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc())
        .args(["-std=c99", "-D_DEFAULT_SOURCE", "-o"])
        .arg(&exe)
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(&src)
        .arg(&lib)
        .arg("-lm")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", artifact_dir())
        .output()
        .unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
