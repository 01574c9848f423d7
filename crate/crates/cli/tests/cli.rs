use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SHIPPED: [&str; 7] = [
    "spectral_harmonic",
    "pphi1_harmonic",
    "tightness",
    "phase_transition",
    "clt_diffusion",
    "polaron_energy",
    "cluster_identity",
];

fn pathgibbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathgibbs"))
        .args(args)
        .env_remove("PATHGIBBS_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// File name to contents, for every file under `dir`.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_validate() {
    for name in SHIPPED {
        let o = pathgibbs(&["validate-config", "--config", name]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "study.variant = cluster_identity\nmodel.bogus_key = 1\n").unwrap();
    let o = pathgibbs(&["validate-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.bogus_key"), "{}", stderr(&o));
}

#[test]
fn bad_values_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "study.variant = phase_transition\nmodel.gamma = 3\n").unwrap();
    let o = pathgibbs(&["validate-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.gamma"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pathgibbs(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pathgibbs(&["sample", "--seed", "x"]).status.code(), Some(1));
    assert_eq!(pathgibbs(&["--help"]).status.code(), Some(0));
}

#[test]
fn a_run_needs_a_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = pathgibbs(&["spectral", "--config", "spectral_harmonic", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn subcommand_must_match_the_study() {
    let out = tempfile::tempdir().unwrap();
    let o = pathgibbs(&["phase", "--config", "cluster_identity", "--seed", "1", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("study.variant"), "{}", stderr(&o));
}

#[test]
fn spectral_run_prints_one_line_per_assertion() {
    let out = tempfile::tempdir().unwrap();
    let o = pathgibbs(&["spectral", "--config", "spectral_harmonic", "--seed", "1", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().next().unwrap().starts_with("PASS spectral_anchor"));
    let dir = out.path().join("spectral_harmonic");
    for f in ["manifest.json", "eigenvalues.csv", "ground_state.csv"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn failing_assertion_exits_two() {
    // Far too coarse a grid for the closed-form check.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("coarse.cfg");
    fs::write(&path, "spectral.half_width = 4\nspectral.points = 21\nspectral.eigenpairs = 4\n").unwrap();
    let o = pathgibbs(&["spectral", "--config", path.to_str().unwrap(), "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("FAIL spectral_anchor"));
}

#[test]
fn environment_overrides_out() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pathgibbs"))
        .args(["spectral", "--config", "spectral_harmonic", "--seed", "1", "--out", flag.path().to_str().unwrap()])
        .env("PATHGIBBS_OUT", env.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env.path().join("spectral_harmonic/manifest.json").is_file());
    assert!(!flag.path().join("spectral_harmonic").exists());
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for out in [&a, &b] {
        let o = pathgibbs(&[
            "sample",
            "--config",
            "pphi1_harmonic",
            "--seed",
            "1",
            "--deterministic",
            "--out",
            out.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    }
    let first = snapshot(&a.path().join("pphi1_harmonic"));
    assert_eq!(first, snapshot(&b.path().join("pphi1_harmonic")));

    // Rerun from the manifest alone: seed and config come from it.
    let manifest = a.path().join("pphi1_harmonic/manifest.json");
    let o = pathgibbs(&["sample", "--config", manifest.to_str().unwrap(), "--deterministic", "--out", c.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(first, snapshot(&c.path().join("pphi1_harmonic")));
}
