use std::fs;
use std::path::Path;
use std::sync::Arc;

use symnet::blackbox::{NetworkOracle, SubsystemOracle};
use symnet::pipeline::{complexity_sweep, Pipeline, PipelineConfig, SafetyMargin, System};

fn small_room(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_json(
        r#"{
            "benchmark": "room", "M": 8,
            "state_cells": [20], "dist_cells": [4],
            "sampling": { "n_per_input": 200 },
            "basis": { "degree": 4 },
            "safety_margin": 0.05,
            "simulation": { "horizon": 100, "boundary_starts": 5, "random_starts": 5, "record": [0, 1], "coupled_starts": 5 },
            "seed": 11
        }"#,
    )
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn files(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    out.sort();
    out
}

#[test]
fn small_room_run_passes_and_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::new(&small_room(dir.path())).unwrap();
    let r = p.run().unwrap();
    assert!(r.success(), "{r:?}");
    assert!(r.coupled_pass);
    for f in [
        "dataset.csv",
        "dataset.meta.json",
        "abstraction.abs",
        "asbf.json",
        "lipschitz.json",
        "coverage.json",
        "certificate.json",
        "controller.ctl",
        "synthesis.json",
        "simulation.json",
        "trajectory.csv",
        "coupled.json",
        "report.md",
        "trajectories.svg",
        "config.resolved.json",
        "manifest.json",
        "timings.json",
        "run.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert!(!files(dir.path()).iter().any(|f| f.ends_with(".tmp")));
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("epsilon = sqrt(psi_bar/alpha)"));
    assert!(report.contains("psi_bar = psi/((1-gamma) eta)"));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("k,subsystem,x_0,u_index,safe_flag\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 101);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Pipeline::new(&small_room(a.path())).unwrap().run().unwrap();
    Pipeline::new(&small_room(b.path())).unwrap().run().unwrap();
    let names = files(a.path());
    assert_eq!(names, files(b.path()));
    for f in names.iter().filter(|f| *f != "timings.json") {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn rerun_with_unchanged_inputs_skips_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_room(dir.path());
    Pipeline::new(&cfg).unwrap().run().unwrap();
    let mut again = Pipeline::new(&cfg).unwrap();
    let r = again.run().unwrap();
    let computed: Vec<_> = r.timings.iter().filter(|t| !t.skipped && t.stage != "report").collect();
    assert!(computed.is_empty(), "{computed:?}");

    // a change in the Lipschitz settings reruns that stage and its dependents only
    let mut changed = cfg.clone();
    changed.lipschitz.batches = 40;
    let mut p = Pipeline::new(&changed).unwrap();
    let r = p.run().unwrap();
    let ran: Vec<&str> = r.timings.iter().filter(|t| !t.skipped).map(|t| t.stage.as_str()).collect();
    assert!(ran.contains(&"lipschitz") && ran.contains(&"compose"));
    assert!(!ran.contains(&"sample") && !ran.contains(&"asbf"));
}

#[test]
fn stages_fail_cleanly_without_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::new(&small_room(dir.path())).unwrap();
    let err = p.asbf().unwrap_err();
    assert!(err.to_string().contains("dataset"), "{err}");
}

/// A subsystem whose one-step map oscillates fast enough that a sparse data
/// set cannot satisfy the compositional condition.
fn rough_system() -> System {
    let f = |x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]| {
        out[0] = 0.4 * (400.0 * x[0]).sin() + 0.05 * u[0] + 0.01 * w[0];
    };
    let sub = SubsystemOracle::from_fn(1, 1, vec![vec![-1.0], vec![1.0]], f).unwrap();
    let net_sub = sub.clone();
    System {
        subsystem: sub,
        network: Arc::new(move |m| {
            NetworkOracle::new(
                vec![net_sub.clone(); m],
                Arc::new(|_x: &[f64], w: &mut [f64]| w.iter_mut().for_each(|v| *v = 0.0)),
            )
        }),
    }
}

#[test]
fn failing_certificate_escalates_samples_then_degree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::from_json(
        r#"{
            "benchmark": "external-oracle", "M": 3,
            "x_box": { "lower": [-0.5], "upper": [0.5] },
            "w_box": { "lower": [-0.5], "upper": [0.5] },
            "state_cells": [10], "dist_cells": [2],
            "sampling": { "n_per_input": 1 },
            "basis": { "degree": 2 },
            "sop": { "alpha_min": 0.5 },
            "safety_margin": 0.0,
            "simulation": { "horizon": 10, "boundary_starts": 1, "random_starts": 1, "record": [0], "coupled_starts": 1 },
            "retry": { "max_attempts": 3 },
            "seed": 5
        }"#,
    )
    .unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let mut p = Pipeline::with_system(&cfg, rough_system()).unwrap();
    let r = p.run().unwrap();
    assert!(!r.success());
    let steps: Vec<(usize, u32)> = r.attempts.iter().map(|a| (a.n_per_input, a.degree)).collect();
    assert_eq!(steps, vec![(1, 2), (2, 2), (2, 4)]);
    assert!(r.attempts.iter().all(|a| !a.pass));
    let last = r.attempts.last().unwrap().total.unwrap();
    assert!(last > 0.0);
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("the condition fails"));
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["sampling"]["n_per_input"], 2);
    assert_eq!(resolved["basis"]["degree"], 4);
}

#[test]
fn external_oracle_requires_a_supplied_system() {
    let mut cfg = small_room(Path::new("unused"));
    cfg.benchmark = symnet::pipeline::Benchmark::ExternalOracle;
    cfg.room = None;
    cfg.x_box = Some(symnet::blackbox::room_domains().0);
    cfg.w_box = Some(symnet::blackbox::room_domains().1);
    assert!(Pipeline::new(&cfg).is_err());
}

#[test]
fn empty_winning_set_reports_no_controller() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_room(dir.path());
    cfg.safety_margin = SafetyMargin::Fixed(0.6);
    let r = Pipeline::new(&cfg).unwrap().run().unwrap();
    assert!(!r.simulation_safe);
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("No controller"));
    let svg = fs::read_to_string(dir.path().join("trajectories.svg")).unwrap();
    assert!(svg.contains("no controller") && !svg.contains("polyline"));
}

#[test]
fn report_stage_needs_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::new(&small_room(dir.path())).unwrap();
    p.report().unwrap();
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("No certificate"));
}

#[test]
fn trajectory_plot_is_clipped_to_the_safe_box() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(&small_room(dir.path())).unwrap().run().unwrap();
    let svg = fs::read_to_string(dir.path().join("trajectories.svg")).unwrap();
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("#cfe8cf"), "safe box is drawn");
    // tick labels of the y axis are the safe-box bounds
    assert!(svg.contains(">-0.5<") && svg.contains(">0.5<"));
}

#[test]
fn sweep_counts_are_linear_and_monolithic_exponent_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_room(dir.path());
    cfg.sampling.n_per_input = 100;
    let t = complexity_sweep(&cfg, None, &[10, 100, 1000, 10_000]).unwrap();
    assert_eq!(t.samples_per_subsystem, 200);
    let comp: Vec<u64> = t.rows.iter().map(|r| r.compositional).collect();
    assert_eq!(comp, vec![2000, 20_000, 200_000, 2_000_000]);
    assert!(t.r_squared > 0.99);
    for r in &t.rows {
        // d^(n M) with n = 1
        assert!((r.monolithic_log10 - r.m as f64 * t.density.log10()).abs() < 1e-9 * r.monolithic_log10.max(1.0));
    }
    assert!((t.density - 200f64.sqrt()).abs() < 1e-12);
    assert!(dir.path().join("sweep.csv").is_file() && dir.path().join("sweep.svg").is_file());
    assert!(complexity_sweep(&cfg, None, &[100, 10]).is_err());
}
