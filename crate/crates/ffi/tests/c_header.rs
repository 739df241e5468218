//! Builds a small C client against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_client_links_and_runs() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = target_dir();
    // the test harness links the rlib; the archive has to be built explicitly
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "--lib", "-p", "oemcoll-ffi"]);
    if target.file_name().is_some_and(|p| p == "release") {
        build.arg("--release");
    }
    assert!(build.status().unwrap().success(), "building the static library failed");
    let lib = target.join("liboemcoll_ffi.a");
    let work = tempfile::tempdir().unwrap();
    let exe = work.path().join("client");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c_client.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("cc not found");
    assert!(status.success(), "C client failed to compile");

    let config = crate_dir.join("../../configs/short_period.toml");
    let out = Command::new(&exe).arg(config).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "client exit {:?}: {stdout}{}", out.status, String::from_utf8_lossy(&out.stderr));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("Zw "));
    assert!(lines[8].starts_with("log_sigma_az "));
}
