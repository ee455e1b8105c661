//! Markdown summary and trajectory plots rendered from a run directory.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::config::{PipelineConfig, SafetyMargin};
use super::plot::{notice, render, Panel, Series};
use super::store::Store;
use super::{Attempt, CoupledSummary, SimulationSummary, SynthesisRecord};
use crate::composition::CompositionCertificate;
use crate::error::{Error, Result};
use crate::gridding::AxisBox;

/// Trajectory CSV rows grouped by subsystem: `(k, x)`.
fn parse_trajectories(text: &str, path: &std::path::Path) -> Result<BTreeMap<usize, Vec<(usize, Vec<f64>)>>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols = header.split(',').count();
    if cols < 5 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected trajectory header {header:?}"),
        });
    }
    let n = cols - 4;
    let mut out: BTreeMap<usize, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad trajectory row {line:?}"),
        };
        if f.len() != cols {
            return Err(bad());
        }
        let k: usize = f[0].parse().map_err(|_| bad())?;
        let i: usize = f[1].parse().map_err(|_| bad())?;
        let x = f[2..2 + n].iter().map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        out.entry(i).or_default().push((k, x));
    }
    Ok(out)
}

fn trajectory_panel(title: &str, rows: &BTreeMap<usize, Vec<(usize, Vec<f64>)>>, safe: &AxisBox, horizon: usize) -> Panel {
    let (lo, hi) = (safe.lower(), safe.upper());
    if safe.dim() == 1 {
        Panel {
            title: title.into(),
            x_label: "k".into(),
            y_label: "x".into(),
            x_range: (0.0, horizon.max(1) as f64),
            y_range: (lo[0], hi[0]),
            region: Some((0.0, lo[0], horizon.max(1) as f64, hi[0])),
            series: rows
                .iter()
                .map(|(i, pts)| Series {
                    label: format!("subsystem {i}"),
                    points: pts.iter().map(|(k, x)| (*k as f64, x[0])).collect(),
                })
                .collect(),
        }
    } else {
        Panel {
            title: title.into(),
            x_label: "x_0".into(),
            y_label: "x_1".into(),
            x_range: (lo[0], hi[0]),
            y_range: (lo[1], hi[1]),
            region: Some((lo[0], lo[1], hi[0], hi[1])),
            series: rows
                .iter()
                .map(|(i, pts)| Series {
                    label: format!("subsystem {i}"),
                    points: pts.iter().map(|(_, x)| (x[0], x[1])).collect(),
                })
                .collect(),
        }
    }
}

/// Returns `(report.md, trajectories.svg)`.
pub fn render_report(store: &Store, cfg: &PipelineConfig, attempts: Option<&[Attempt]>) -> Result<(String, String)> {
    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "Benchmark `{:?}`, M = {}, seed {}.\n", cfg.benchmark, cfg.m, cfg.seed);
    if let Some(att) = attempts {
        let _ = writeln!(md, "## Attempts\n\n| attempt | samples per input | degree | total | pass |\n|---|---|---|---|---|");
        for a in att {
            let total = a.total.map_or_else(|| a.error.clone().unwrap_or_default(), |t| format!("{t:.6e}"));
            let _ = writeln!(md, "| {} | {} | {} | {} | {} |", a.attempt, a.n_per_input, a.degree, total, a.pass);
        }
        md.push('\n');
    }
    if !store.exists("certificate.json") {
        let _ = writeln!(md, "No certificate was produced.");
        return Ok((md, notice("no controller")));
    }
    let cert: CompositionCertificate = store.read_json("certificate.json")?;
    let _ = writeln!(md, "## Compositional condition\n");
    let _ = writeln!(md, "| subsystems | mu | varpi | L | sigma | term |\n|---|---|---|---|---|---|");
    let mut k = 0;
    while k < cert.per_subsystem.len() {
        let t = cert.per_subsystem[k];
        let mut j = k + 1;
        while j < cert.per_subsystem.len() && cert.per_subsystem[j] == t {
            j += 1;
        }
        let range = if j - k == 1 { format!("{k}") } else { format!("{k}..{}", j - 1) };
        let _ = writeln!(
            md,
            "| {range} | {:.6} | {:.2e} | {:.6} | {:.6} | {:.6} |",
            t.input.mu, t.input.varpi, t.input.lipschitz, t.input.sigma, t.term
        );
        k = j;
    }
    let _ = writeln!(md, "\nTotal {:.6e}: {}.\n", cert.total, if cert.pass { "the condition holds" } else { "the condition fails" });
    let _ = writeln!(
        md,
        "Error bound: psi = {:.6}, alpha = {:.6}, gamma = {}, eta = {} give psi_bar = psi/((1-gamma) eta) = {:.6} and epsilon = sqrt(psi_bar/alpha) = {:.6}.\n",
        cert.psi, cert.alpha, cert.gamma, cert.eta, cert.psi_bar, cert.epsilon
    );
    let (_, _, safe) = cfg.boxes()?;
    let synth = if cfg.homogeneous { "synthesis.json".to_string() } else { "subsystems/00000/synthesis.json".to_string() };
    let mut has_controller = false;
    if store.exists(&synth) {
        let rec: SynthesisRecord = store.read_json(&synth)?;
        has_controller = rec.winning_cells > 0;
        let margin = match cfg.safety_margin {
            SafetyMargin::Epsilon => format!("epsilon ({:.6})", rec.summary.margin),
            SafetyMargin::Fixed(v) => format!("{v}"),
        };
        let _ = writeln!(md, "## Controller\n");
        if has_controller {
            let _ = writeln!(
                md,
                "Safe box {:?}..{:?}, margin {margin}: {} safe cells, {} after contraction, {} winning in the core, {} in the entry layer.\n",
                safe.lower(),
                safe.upper(),
                rec.summary.safe_cells,
                rec.summary.contracted_cells,
                rec.summary.core_cells,
                rec.summary.entry_cells
            );
        } else {
            let _ = writeln!(md, "No controller: the winning set is empty (margin {margin}).\n");
        }
    }
    if store.exists("simulation.json") {
        let sim: SimulationSummary = store.read_json("simulation.json")?;
        let _ = writeln!(md, "## Closed loop\n\n| scenario | starts | safe | first violation |\n|---|---|---|---|");
        for s in &sim.scenarios {
            let v = s.violations.first().map_or("none".to_string(), |(k, v)| format!("start {k}: {:?} at step {}, subsystem {}", v.kind, v.step, v.subsystem));
            let _ = writeln!(md, "| {} | {} | {} | {} |", s.name, s.starts, s.safe_runs, v);
        }
        let _ = writeln!(md, "\nHorizon {} steps; all runs safe: {}.\n", sim.horizon, sim.all_safe);
    }
    if store.exists("coupled.json") {
        let c: CoupledSummary = store.read_json("coupled.json")?;
        let _ = writeln!(
            md,
            "## Coupled runs\n\n{} concrete/abstract pairs over {} steps: max V = {:.6} (psi_bar {:.6}), max distance = {:.6} (epsilon {:.6}); relation kept: {}.\n",
            c.runs.len(),
            c.horizon,
            c.max_value,
            c.psi_bar,
            c.max_distance,
            c.epsilon,
            c.pass
        );
    }
    let manifest = store.manifest()?;
    let _ = writeln!(md, "## Artifacts\n\n| file | sha256 |\n|---|---|");
    let mut files = BTreeMap::new();
    for rec in manifest.stages.values() {
        files.extend(rec.outputs.iter().map(|(a, b)| (a.clone(), b.clone())));
    }
    for (f, d) in &files {
        let _ = writeln!(md, "| {f} | `{d}` |");
    }

    let svg = if !has_controller {
        notice("no controller")
    } else {
        let mut panels = Vec::new();
        for (file, title) in [("trajectory.csv", "Starts on the safe-set boundary"), ("trajectory_random.csv", "Random starts")] {
            if store.exists(file) {
                let rows = parse_trajectories(&store.read_string(file)?, &store.path(file))?;
                if !rows.is_empty() {
                    panels.push(trajectory_panel(title, &rows, safe, cfg.simulation.horizon));
                }
            }
        }
        if panels.is_empty() {
            notice("no trajectories recorded")
        } else {
            render(&panels)
        }
    };
    Ok((md, svg))
}
