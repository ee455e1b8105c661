//! End-to-end orchestration: sample, abstract, certify, compose, synthesize,
//! simulate and report, with every intermediate result persisted.
//!
//! Each stage reads only files written by earlier stages and records a digest
//! of its inputs in `manifest.json`; re-running a stage whose inputs and
//! outputs are unchanged does nothing.

mod config;
pub mod plot;
mod report;
mod store;
mod sweep;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::abstraction::{build_symbolic, SymbolicModel};
use crate::blackbox::{make_room_network, make_vehicle_network, room_subsystem, uniform_in, vehicle_subsystem, NetworkOracle, SubsystemOracle};
use crate::certificate::{solve_sop, AsbfSolution, DenseSimplex};
use crate::composition::{certify, CompositionCertificate, TermInput};
use crate::error::{Error, Result};
use crate::gridding::{build_grid, AxisBox};
use crate::lipschitz::{estimate, mix, LipschitzEstimate};
use crate::sampling::{collect, compute_sigma, CoverageReport, Dataset, DatasetMeta};
use crate::synthesis::{coupled_run, monte_carlo, simulate_closed_loop, synthesize, trajectory_csv, AbstractController, DisturbanceChoice, SynthesisSummary, Violation};

pub use config::{Benchmark, PipelineConfig, RetryConfig, SafetyMargin, SamplingConfig, SimulationConfig};
pub use report::render_report;
pub use store::{input_key, sha256_hex, Manifest, StageRecord, Store, MANIFEST};
pub use sweep::{complexity_sweep, linear_fit, SweepRow, SweepTable};

/// Builds the network oracle for a given subsystem count.
pub type NetworkFactory = dyn Fn(usize) -> Result<NetworkOracle> + Send + Sync;

/// The black box under study: one subsystem oracle shared by all subsystems
/// and a way to assemble the full network for simulation.
#[derive(Clone)]
pub struct System {
    pub subsystem: SubsystemOracle,
    pub network: Arc<NetworkFactory>,
}

impl System {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.benchmark {
            Benchmark::Room => {
                let rc = cfg.room.clone().ok_or_else(|| Error::Config("room section missing".into()))?;
                let subsystem = room_subsystem(&rc)?;
                Ok(Self {
                    subsystem,
                    network: Arc::new(move |m| {
                        let mut c = rc.clone();
                        c.rooms = m;
                        make_room_network(&c)
                    }),
                })
            }
            Benchmark::Vehicle => {
                let vc = cfg.vehicle.clone().ok_or_else(|| Error::Config("vehicle section missing".into()))?;
                let subsystem = vehicle_subsystem(&vc)?;
                Ok(Self {
                    subsystem,
                    network: Arc::new(move |m| {
                        let mut c = vc.clone();
                        c.vehicles = m;
                        make_vehicle_network(&c)
                    }),
                })
            }
            Benchmark::ExternalOracle => Err(Error::Config(
                "external-oracle benchmarks need a caller-supplied system (Pipeline::with_system)".into(),
            )),
        }
    }
}

/// Files of one certified subsystem. Homogeneous runs have a single unit at
/// the output root; otherwise unit `i` lives under `subsystems/<i>/`.
#[derive(Clone, Debug)]
struct Unit {
    index: usize,
    prefix: String,
    seed: u64,
}

impl Unit {
    fn file(&self, name: &str) -> String {
        format!("{}{name}", self.prefix)
    }

    fn stage(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{name}/{}", self.index)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: usize,
    pub n_per_input: usize,
    pub degree: u32,
    pub total: Option<f64>,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub starts: usize,
    pub safe_runs: usize,
    /// First violation of every unsafe run, by start index.
    pub violations: Vec<(usize, Violation)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub horizon: usize,
    pub subsystems: usize,
    pub controller_available: bool,
    pub scenarios: Vec<ScenarioOutcome>,
    pub all_safe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledStart {
    pub start_value: f64,
    pub steps: usize,
    pub max_value: f64,
    pub max_distance: f64,
    pub abstract_escape: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledSummary {
    pub choice: DisturbanceChoice,
    pub horizon: usize,
    pub psi_bar: f64,
    pub epsilon: f64,
    pub runs: Vec<CoupledStart>,
    pub max_value: f64,
    pub max_distance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub summary: SynthesisSummary,
    pub winning_cells: usize,
    pub controller_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub total: f64,
    pub pass: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub psi: f64,
    pub eta: f64,
    pub psi_bar: f64,
    pub epsilon: f64,
}

/// Outcome of a full run; `timings` is kept out of `run.json` because it is
/// the only non-reproducible quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub attempts: Vec<Attempt>,
    pub certificate: Option<CertificateSummary>,
    pub simulation_safe: bool,
    pub coupled_pass: bool,
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    pub fn success(&self) -> bool {
        self.certificate.as_ref().is_some_and(|c| c.pass) && self.simulation_safe
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    system: System,
    store: Store,
    timings: Vec<StageTiming>,
}

impl Pipeline {
    /// Resolves `cfg` and opens its output directory.
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let system = System::from_config(&cfg)?;
        Self::assemble(cfg, system)
    }

    /// Pipeline over a caller-supplied black box.
    pub fn with_system(cfg: &PipelineConfig, system: System) -> Result<Self> {
        let cfg = cfg.resolve()?;
        Self::assemble(cfg, system)
    }

    fn assemble(cfg: PipelineConfig, system: System) -> Result<Self> {
        let (x, w, _) = cfg.boxes()?;
        if x.dim() != system.subsystem.state_dim() || w.dim() != system.subsystem.dist_dim() {
            return Err(Error::Config("boxes do not match the subsystem oracle".into()));
        }
        let store = Store::create(&cfg.out_dir)?;
        Ok(Self {
            cfg,
            system,
            store,
            timings: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn timings(&self) -> &[StageTiming] {
        &self.timings
    }

    fn units(&self) -> Vec<Unit> {
        if self.cfg.homogeneous {
            vec![Unit {
                index: 0,
                prefix: String::new(),
                seed: self.cfg.seed,
            }]
        } else {
            (0..self.cfg.m)
                .map(|i| Unit {
                    index: i,
                    prefix: format!("subsystems/{i:05}/"),
                    seed: mix(self.cfg.seed, i as u64 + 1),
                })
                .collect()
        }
    }

    /// Unit certifying subsystem `i`.
    fn unit_of(&self, units: &[Unit], i: usize) -> usize {
        if self.cfg.homogeneous {
            0
        } else {
            i.min(units.len() - 1)
        }
    }

    fn network_section(&self) -> serde_json::Value {
        json!({ "benchmark": self.cfg.benchmark, "room": self.cfg.room, "vehicle": self.cfg.vehicle })
    }

    /// Runs `body` unless the manifest shows the stage is current.
    fn stage<F>(&mut self, name: &str, key: String, body: F) -> Result<()>
    where
        F: FnOnce(&Self) -> Result<BTreeMap<String, String>>,
    {
        let t = Instant::now();
        if self.store.up_to_date(name, &key)? {
            info!("stage {name}: inputs unchanged, skipped");
            self.timings.push(StageTiming {
                stage: name.to_string(),
                seconds: t.elapsed().as_secs_f64(),
                skipped: true,
            });
            return Ok(());
        }
        let outputs = body(self)?;
        self.store.record(name, key, outputs)?;
        let seconds = t.elapsed().as_secs_f64();
        info!("stage {name}: {seconds:.2} s");
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds,
            skipped: false,
        });
        Ok(())
    }

    fn digests(&self, names: &[String]) -> Result<Vec<String>> {
        names.iter().map(|n| self.store.digest(n)).collect()
    }

    fn load_dataset(&self, u: &Unit) -> Result<Dataset> {
        let meta: DatasetMeta = self.store.read_json(&u.file("dataset.meta.json"))?;
        let text = self.store.read_string(&u.file("dataset.csv"))?;
        Dataset::from_csv(meta, &text, &self.store.path(&u.file("dataset.csv")))
    }

    fn load_model(&self, u: &Unit) -> Result<SymbolicModel> {
        let name = u.file("abstraction.abs");
        SymbolicModel::from_bytes(&self.store.read(&name)?, &self.store.path(&name))
    }

    fn load_controller(&self, u: &Unit) -> Result<AbstractController> {
        let name = u.file("controller.ctl");
        AbstractController::from_bytes(&self.store.read(&name)?, &self.store.path(&name))
    }

    pub fn sample(&mut self) -> Result<()> {
        for u in self.units() {
            let (x, w, _) = self.cfg.boxes()?;
            let key = input_key(
                "sample",
                &json!({
                    "network": self.network_section(),
                    "x_box": x, "w_box": w,
                    "n_per_input": self.cfg.sampling.n_per_input,
                    "strategy": self.cfg.sampling.strategy,
                    "seed": u.seed, "index": u.index,
                }),
                &[],
            )?;
            self.stage(&u.stage("sample"), key, |p| {
                let (x, w, _) = p.cfg.boxes()?;
                let mut ds = collect(&p.system.subsystem, x, w, p.cfg.sampling.n_per_input, p.cfg.sampling.strategy, u.seed)?;
                ds.meta.subsystem_id = u.index;
                let mut out = BTreeMap::new();
                out.insert(u.file("dataset.csv"), p.store.write(&u.file("dataset.csv"), ds.to_csv().as_bytes())?);
                out.insert(u.file("dataset.meta.json"), p.store.write_json(&u.file("dataset.meta.json"), &ds.meta)?);
                Ok(out)
            })?;
        }
        Ok(())
    }

    pub fn abstraction(&mut self) -> Result<()> {
        for u in self.units() {
            let (x, w, _) = self.cfg.boxes()?;
            let key = input_key(
                "abstract",
                &json!({
                    "network": self.network_section(),
                    "x_box": x, "w_box": w,
                    "state_cells": self.cfg.state_cells, "dist_cells": self.cfg.dist_cells,
                }),
                &[],
            )?;
            self.stage(&u.stage("abstract"), key, |p| {
                let (x, w, _) = p.cfg.boxes()?;
                let sg = build_grid(x.clone(), &p.cfg.state_cells)?;
                let dg = build_grid(w.clone(), &p.cfg.dist_cells)?;
                let sm = build_symbolic(&p.system.subsystem, &sg, &dg)?;
                let name = u.file("abstraction.abs");
                Ok(BTreeMap::from([(name.clone(), p.store.write(&name, &sm.to_bytes())?)]))
            })?;
        }
        Ok(())
    }

    pub fn asbf(&mut self) -> Result<()> {
        for u in self.units() {
            let files = vec![u.file("dataset.csv"), u.file("dataset.meta.json"), u.file("abstraction.abs")];
            let mut sop = self.cfg.sop.clone();
            sop.seed = u.seed;
            let key = input_key("asbf", &json!({ "basis": self.cfg.basis, "sop": sop }), &self.digests(&files)?)?;
            self.stage(&u.stage("asbf"), key, |p| {
                let ds = p.load_dataset(&u)?;
                let sm = p.load_model(&u)?;
                let basis = p.cfg.basis.build(ds.state_dim())?;
                let sol = solve_sop(&ds, &sm, &basis, &sop, &DenseSimplex::default())?;
                info!(
                    "subsystem {}: mu={:.6} varpi={:.2e} gamma={} alpha={:.4} psi={:.4}",
                    u.index, sol.mu, sol.varpi, sol.gamma, sol.alpha, sol.psi
                );
                let name = u.file("asbf.json");
                Ok(BTreeMap::from([(name.clone(), p.store.write_json(&name, &sol)?)]))
            })?;
        }
        Ok(())
    }

    pub fn lipschitz(&mut self) -> Result<()> {
        for u in self.units() {
            let files = vec![u.file("asbf.json"), u.file("abstraction.abs")];
            let mut lc = self.cfg.lipschitz.clone();
            lc.seed = u.seed;
            let key = input_key("lipschitz", &json!({ "network": self.network_section(), "lipschitz": lc }), &self.digests(&files)?)?;
            self.stage(&u.stage("lipschitz"), key, |p| {
                let sol: AsbfSolution = p.store.read_json(&u.file("asbf.json"))?;
                let sm = p.load_model(&u)?;
                let est = estimate(&p.system.subsystem, &sol, &sm, &lc)?;
                if est.spread.fallbacks > 0 {
                    warn!("subsystem {}: {} Weibull fits fell back to the empirical maximum", u.index, est.spread.fallbacks);
                }
                let name = u.file("lipschitz.json");
                Ok(BTreeMap::from([(name.clone(), p.store.write_json(&name, &est)?)]))
            })?;
        }
        Ok(())
    }

    pub fn sigma(&mut self) -> Result<()> {
        for u in self.units() {
            let files = vec![u.file("dataset.csv"), u.file("dataset.meta.json")];
            let (x, w, _) = self.cfg.boxes()?;
            let key = input_key("sigma", &json!({ "x_box": x, "w_box": w, "eval": self.cfg.eval_points() }), &self.digests(&files)?)?;
            self.stage(&u.stage("sigma"), key, |p| {
                let ds = p.load_dataset(&u)?;
                let (x, w, _) = p.cfg.boxes()?;
                let cov = compute_sigma(&ds, x, w, &p.cfg.eval_points())?;
                let name = u.file("coverage.json");
                Ok(BTreeMap::from([(name.clone(), p.store.write_json(&name, &cov)?)]))
            })?;
        }
        Ok(())
    }

    pub fn compose(&mut self) -> Result<()> {
        let units = self.units();
        let files: Vec<String> = units
            .iter()
            .flat_map(|u| [u.file("asbf.json"), u.file("lipschitz.json"), u.file("coverage.json")])
            .collect();
        let key = input_key("compose", &json!({ "M": self.cfg.m, "eta": self.cfg.eta }), &self.digests(&files)?)?;
        self.stage("compose", key, |p| {
            let mut sols = Vec::with_capacity(units.len());
            let mut terms = Vec::with_capacity(units.len());
            for u in &units {
                let sol: AsbfSolution = p.store.read_json(&u.file("asbf.json"))?;
                let est: LipschitzEstimate = p.store.read_json(&u.file("lipschitz.json"))?;
                let cov: CoverageReport = p.store.read_json(&u.file("coverage.json"))?;
                terms.push(TermInput::new(sol.mu, sol.varpi, est.l, cov.sigma));
                sols.push(sol);
            }
            let idx: Vec<usize> = (0..p.cfg.m).map(|i| p.unit_of(&units, i)).collect();
            let per_sol: Vec<&AsbfSolution> = idx.iter().map(|&k| &sols[k]).collect();
            let per_term: Vec<TermInput> = idx.iter().map(|&k| terms[k]).collect();
            let mut cert = certify(&per_sol, &per_term, p.cfg.eta)?;
            for f in &files {
                cert.digests.insert(f.clone(), p.store.digest(f)?);
            }
            info!("certificate total {:.6} over {} subsystems, pass={}", cert.total, p.cfg.m, cert.pass);
            Ok(BTreeMap::from([("certificate.json".to_string(), p.store.write_json("certificate.json", &cert)?)]))
        })
    }

    fn margin(&self) -> Result<f64> {
        match self.cfg.safety_margin {
            SafetyMargin::Fixed(v) => Ok(v),
            SafetyMargin::Epsilon => {
                let cert: CompositionCertificate = self.store.read_json("certificate.json")?;
                Ok(cert.epsilon)
            }
        }
    }

    pub fn synthesize(&mut self) -> Result<()> {
        for u in self.units() {
            let mut files = vec![u.file("abstraction.abs")];
            if self.cfg.safety_margin == SafetyMargin::Epsilon {
                files.push("certificate.json".into());
            }
            let (_, _, safe) = self.cfg.boxes()?;
            let key = input_key("synthesize", &json!({ "safe_box": safe, "margin": self.cfg.safety_margin }), &self.digests(&files)?)?;
            self.stage(&u.stage("synthesize"), key, |p| {
                let sm = p.load_model(&u)?;
                let (_, _, safe) = p.cfg.boxes()?;
                let (ctl, summary) = synthesize(&sm, safe, p.margin()?)?;
                if ctl.winning_count() == 0 {
                    warn!("subsystem {}: empty winning set", u.index);
                }
                let bytes = ctl.to_bytes();
                let rec = SynthesisRecord {
                    summary,
                    winning_cells: ctl.winning_count(),
                    controller_digest: sha256_hex(&bytes),
                };
                let mut out = BTreeMap::new();
                out.insert(u.file("controller.ctl"), p.store.write(&u.file("controller.ctl"), &bytes)?);
                out.insert(u.file("synthesis.json"), p.store.write_json(&u.file("synthesis.json"), &rec)?);
                Ok(out)
            })?;
        }
        Ok(())
    }

    fn starts(&self, rng: &mut ChaCha8Rng, count: usize, boundary: bool, safe: &AxisBox) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let mut x0 = Vec::with_capacity(self.cfg.m * safe.dim());
                for _ in 0..self.cfg.m {
                    let mut p = uniform_in(rng, safe);
                    if boundary {
                        let a = rng.gen_range(0..safe.dim());
                        p[a] = if rng.gen_bool(0.5) { safe.lower()[a] } else { safe.upper()[a] };
                    }
                    x0.extend(p);
                }
                x0
            })
            .collect()
    }

    pub fn simulate(&mut self) -> Result<()> {
        let units = self.units();
        let mut files: Vec<String> = units
            .iter()
            .flat_map(|u| [u.file("controller.ctl"), u.file("asbf.json"), u.file("abstraction.abs")])
            .collect();
        files.push("certificate.json".into());
        let (_, _, safe) = self.cfg.boxes()?;
        let key = input_key(
            "simulate",
            &json!({ "network": self.network_section(), "M": self.cfg.m, "safe_box": safe, "simulation": self.cfg.simulation, "seed": self.cfg.seed }),
            &self.digests(&files)?,
        )?;
        self.stage("simulate", key, |p| p.run_simulations(&units))
    }

    fn run_simulations(&self, units: &[Unit]) -> Result<BTreeMap<String, String>> {
        let sc = &self.cfg.simulation;
        let m = self.cfg.m;
        let (_, _, safe) = self.cfg.boxes()?;
        let network = (self.system.network)(m)?;
        let ctls: Vec<AbstractController> = units.iter().map(|u| self.load_controller(u)).collect::<Result<_>>()?;
        let models: Vec<SymbolicModel> = units.iter().map(|u| self.load_model(u)).collect::<Result<_>>()?;
        let sols: Vec<AsbfSolution> = units.iter().map(|u| self.store.read_json(&u.file("asbf.json"))).collect::<Result<_>>()?;
        let cert: CompositionCertificate = self.store.read_json("certificate.json")?;
        let idx: Vec<usize> = (0..m).map(|i| self.unit_of(units, i)).collect();
        let ctl_refs: Vec<&AbstractController> = idx.iter().map(|&k| &ctls[k]).collect();
        let boxes = vec![safe; m];
        let available = ctls.iter().all(|c| c.winning_count() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, 0x5157));
        let boundary = self.starts(&mut rng, sc.boundary_starts, true, safe);
        let random = self.starts(&mut rng, sc.random_starts, false, safe);
        let mut out = BTreeMap::new();
        let mut scenarios = Vec::new();
        for (name, starts, file) in [("boundary", &boundary, "trajectory.csv"), ("random", &random, "trajectory_random.csv")] {
            let (runs, log) = if available && !starts.is_empty() {
                let runs = monte_carlo(&network, &ctl_refs, &boxes, starts, sc.horizon)?;
                let logged = simulate_closed_loop(&network, &ctl_refs, &boxes, &starts[0], sc.horizon, &sc.record)?;
                (runs, logged.log)
            } else {
                (Vec::new(), Vec::new())
            };
            let violations: Vec<(usize, Violation)> = runs.iter().enumerate().filter_map(|(k, r)| r.violation.map(|v| (k, v))).collect();
            scenarios.push(ScenarioOutcome {
                name: name.into(),
                starts: starts.len(),
                safe_runs: runs.iter().filter(|r| r.safe).count(),
                violations,
            });
            out.insert(file.to_string(), self.store.write(file, trajectory_csv(&log, safe.dim()).as_bytes())?);
        }
        let all_safe = available && scenarios.iter().all(|s| s.safe_runs == s.starts);
        let summary = SimulationSummary {
            horizon: sc.horizon,
            subsystems: m,
            controller_available: available,
            scenarios,
            all_safe,
        };
        out.insert("simulation.json".into(), self.store.write_json("simulation.json", &summary)?);

        let model_refs: Vec<&SymbolicModel> = idx.iter().map(|&k| &models[k]).collect();
        let sol_refs: Vec<&AsbfSolution> = idx.iter().map(|&k| &sols[k]).collect();
        let coupled_starts: Vec<(Vec<f64>, Vec<f64>)> = if available {
            (0..sc.coupled_starts)
                .map(|_| {
                    let mut x0 = Vec::new();
                    let mut xh = Vec::new();
                    for &k in &idx {
                        let g = models[k].state_grid();
                        // draw from winning cells so the abstract run has a move
                        let mut p = uniform_in(&mut rng, safe);
                        for _ in 0..1000 {
                            if g.cell_of(&p).is_some_and(|s| ctls[k].is_winning(s)) {
                                break;
                            }
                            p = uniform_in(&mut rng, safe);
                        }
                        let s = g.nearest_cell(&p);
                        x0.extend_from_slice(&p);
                        xh.extend(g.representative(s));
                    }
                    (x0, xh)
                })
                .collect()
        } else {
            Vec::new()
        };
        let runs: Vec<CoupledStart> = coupled_starts
            .par_iter()
            .map(|(x0, xh)| {
                let start_value = crate::composition::evaluate_abf(&sol_refs, x0, xh)?;
                let r = coupled_run(&network, &model_refs, &sol_refs, &ctl_refs, x0, xh, sc.horizon, DisturbanceChoice::QuantizedTrue)?;
                Ok(CoupledStart {
                    start_value,
                    steps: r.steps,
                    max_value: r.max_value,
                    max_distance: r.max_distance,
                    abstract_escape: r.abstract_escape,
                })
            })
            .collect::<Result<_>>()?;
        let max_value = runs.iter().map(|r| r.max_value).reduce(f64::max).unwrap_or(0.0);
        let max_distance = runs.iter().map(|r| r.max_distance).fold(0.0, f64::max);
        let pass = !runs.is_empty()
            && runs
                .iter()
                .all(|r| r.start_value > cert.psi_bar || (!r.abstract_escape && r.max_value <= cert.psi_bar && r.max_distance <= cert.epsilon));
        let coupled = CoupledSummary {
            choice: DisturbanceChoice::QuantizedTrue,
            horizon: sc.horizon,
            psi_bar: cert.psi_bar,
            epsilon: cert.epsilon,
            runs,
            max_value,
            max_distance,
            pass,
        };
        out.insert("coupled.json".into(), self.store.write_json("coupled.json", &coupled)?);
        Ok(out)
    }

    /// Writes `report.md` and `trajectories.svg` from the artifacts on disk.
    pub fn report(&mut self) -> Result<()> {
        let t = Instant::now();
        let attempts: Option<Vec<Attempt>> = if self.store.exists("attempts.json") {
            Some(self.store.read_json("attempts.json")?)
        } else {
            None
        };
        let (md, svg) = render_report(&self.store, &self.cfg, attempts.as_deref())?;
        self.store.write("report.md", md.as_bytes())?;
        self.store.write("trajectories.svg", svg.as_bytes())?;
        self.timings.push(StageTiming {
            stage: "report".into(),
            seconds: t.elapsed().as_secs_f64(),
            skipped: false,
        });
        Ok(())
    }

    fn certify_stages(&mut self) -> Result<CompositionCertificate> {
        self.sample()?;
        self.abstraction()?;
        self.asbf()?;
        self.lipschitz()?;
        self.sigma()?;
        self.compose()?;
        self.store.read_json("certificate.json")
    }

    /// All stages, escalating data and basis degree while the compositional
    /// condition fails.
    pub fn run(&mut self) -> Result<RunReport> {
        let mut attempts = Vec::new();
        let mut cert = None;
        for attempt in 1..=self.cfg.retry.max_attempts {
            let outcome = self.certify_stages();
            let mut rec = Attempt {
                attempt,
                n_per_input: self.cfg.sampling.n_per_input,
                degree: self.cfg.basis.degree,
                total: None,
                pass: false,
                error: None,
            };
            match outcome {
                Ok(c) => {
                    rec.total = Some(c.total);
                    rec.pass = c.pass;
                    cert = Some(c);
                }
                Err(e @ Error::Infeasible { .. }) => {
                    rec.error = Some(e.to_string());
                    cert = None;
                }
                Err(e) => return Err(e),
            }
            let pass = rec.pass;
            attempts.push(rec);
            if pass || attempt == self.cfg.retry.max_attempts {
                break;
            }
            if attempt % 2 == 1 {
                self.cfg.sampling.n_per_input *= 2;
                info!("certificate failed; doubling samples to {} per input", self.cfg.sampling.n_per_input);
            } else {
                self.cfg.basis.degree += 2;
                info!("certificate failed; raising the basis degree to {}", self.cfg.basis.degree);
            }
            self.cfg = self.cfg.resolve()?;
        }
        self.store.write_json("config.resolved.json", &self.cfg)?;
        self.store.write_json("attempts.json", &attempts)?;
        let mut simulation_safe = false;
        let mut coupled_pass = false;
        if cert.is_some() {
            self.synthesize()?;
            self.simulate()?;
            let sim: SimulationSummary = self.store.read_json("simulation.json")?;
            let coupled: CoupledSummary = self.store.read_json("coupled.json")?;
            simulation_safe = sim.all_safe;
            coupled_pass = coupled.pass;
        }
        self.report()?;
        let manifest = self.store.manifest()?;
        let mut artifacts = BTreeMap::new();
        for rec in manifest.stages.values() {
            for (k, v) in &rec.outputs {
                artifacts.insert(k.clone(), v.clone());
            }
        }
        for name in ["config.resolved.json", "attempts.json", "report.md", "trajectories.svg"] {
            artifacts.insert(name.to_string(), self.store.digest(name)?);
        }
        let report = RunReport {
            attempts,
            certificate: cert.map(|c| CertificateSummary {
                total: c.total,
                pass: c.pass,
                gamma: c.gamma,
                alpha: c.alpha,
                psi: c.psi,
                eta: c.eta,
                psi_bar: c.psi_bar,
                epsilon: c.epsilon,
            }),
            simulation_safe,
            coupled_pass,
            artifacts,
            timings: self.timings.clone(),
        };
        self.store.write_json("run.json", &report)?;
        self.store.write_json("timings.json", &self.timings)?;
        Ok(report)
    }
}
