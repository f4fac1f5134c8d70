use std::path::PathBuf;
use std::process::Command;

// Compiles tests/smoke.c against the generated header and the static
// library that cargo builds next to this test binary.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    }) else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/c_smoke-xxxx
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(|p| p.parent())
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("librplsim_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compile failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}: {stdout}", out.status);
    assert!(stdout.contains("sent "));
    assert!(stdout.contains("error: "));
}
