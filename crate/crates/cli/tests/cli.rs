use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn symnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{
            "benchmark": "room", "M": 6,
            "state_cells": [20], "dist_cells": [4],
            "sampling": { "n_per_input": 100 },
            "basis": { "degree": 4 },
            "safety_margin": 0.05,
            "simulation": { "horizon": 50, "boundary_starts": 3, "random_starts": 3, "record": [0], "coupled_starts": 3 },
            "seed": 3
        }"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let o = symnet(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("attempt 1"), "{stdout}");
    for f in ["certificate.json", "controller.ctl", "simulation.json", "report.md", "trajectories.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["M"], 6);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("o");
    let o = symnet(&["sample", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9", "--m", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("dataset.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"benchmark":"room","M":0,"state_cells":[20],"dist_cells":[4],"basis":{"degree":2},"seed":1}"#).unwrap();
    assert_eq!(symnet(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(symnet(&["run", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(symnet(&["run"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("empty");
    assert_eq!(symnet(&["asbf", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let o = symnet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--m-values", "10,100,1000"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("M,compositional,log10_monolithic\n10,2000,"), "{stdout}");
    assert!(out.join("sweep.csv").is_file());
}
