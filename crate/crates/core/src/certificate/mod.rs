//! Scenario programs for alternating sub-bisimulation functions.
//!
//! For a fixed `γ` every constraint is linear in the decision vector
//! `[q; α; ρ; ψ; μ; ϖ]`. Each sample `z` and abstract tuple `(x̂, u_z, ŵ)`
//! contributes four rows, with `V(a, b) = Σ_j q_j p_j(a, b)`:
//!
//! * `−V(x_z, x̂) ≤ μ`
//! * `α‖x_z − x̂‖² − V(x_z, x̂) ≤ μ`
//! * `V(x⁺_z, f̂(x̂, u_z, ŵ)) − γ V(x_z, x̂) − ρ‖w_z − ŵ‖ − ψ ≤ μ`
//! * `ρ‖w_z − ŵ‖ ≤ ϖ`
//!
//! The third row is dropped when `f̂` is the sink, where the successor has no
//! representative. The full tuple set is handled by a cutting-plane loop.

pub mod basis;
pub mod lp;


use log::{debug, info};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{SymbolicModel, SINK};
use crate::error::{Error, Result};
use crate::sampling::Dataset;
pub use basis::{BasisConfig, BasisSpec, Term};
pub use lp::{DenseSimplex, LinearProgram, LpOutcome, LpSolver, LpStatus, Row};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SopConfig {
    pub gamma_grid: Vec<f64>,
    /// Box bound on every basis coefficient.
    pub q_bound: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub rho_max: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub mu_bound: f64,
    pub varpi_min: f64,
    pub varpi_max: f64,
    /// Abstract tuples per sample in the first cutting-plane round.
    pub initial_tuples: usize,
    /// Violated tuples added per round.
    pub cuts_per_round: usize,
    /// Violated tuples kept per sample during one scan.
    pub cuts_per_sample: usize,
    pub max_rounds: usize,
    pub tolerance: f64,
    pub phase_slack: f64,
    pub seed: u64,
}

impl Default for SopConfig {
    fn default() -> Self {
        Self {
            gamma_grid: vec![0.9, 0.95, 0.975, 0.985, 0.99, 0.995],
            q_bound: 1.0,
            alpha_min: 1e-2,
            alpha_max: 1e3,
            rho_max: 1e3,
            psi_min: 1e-6,
            psi_max: 1e2,
            mu_bound: 1e2,
            varpi_min: 1e-6,
            varpi_max: 1e3,
            initial_tuples: 32,
            cuts_per_round: 2000,
            cuts_per_sample: 4,
            max_rounds: 500,
            tolerance: 1e-8,
            phase_slack: 1e-9,
            seed: 0,
        }
    }
}

impl SopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::Config(format!("gamma grid must be a non-empty subset of (0,1): {:?}", self.gamma_grid)));
        }
        let pairs = [
            ("alpha", self.alpha_min, self.alpha_max),
            ("psi", self.psi_min, self.psi_max),
            ("varpi", self.varpi_min, self.varpi_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name} bounds must satisfy 0 < min <= max < inf")));
            }
        }
        for (name, v) in [("q_bound", self.q_bound), ("rho_max", self.rho_max), ("mu_bound", self.mu_bound)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if self.initial_tuples == 0 || self.cuts_per_round == 0 || self.cuts_per_sample == 0 {
            return Err(Error::Config("cutting-plane counts must be positive".into()));
        }
        Ok(())
    }
}

/// Positions of the scalar decision variables after the `r` coefficients.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub r: usize,
}

impl Layout {
    pub fn alpha(self) -> usize {
        self.r
    }
    pub fn rho(self) -> usize {
        self.r + 1
    }
    pub fn psi(self) -> usize {
        self.r + 2
    }
    pub fn mu(self) -> usize {
        self.r + 3
    }
    pub fn varpi(self) -> usize {
        self.r + 4
    }
    pub fn len(self) -> usize {
        self.r + 5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    NonNegative,
    LowerBound,
    Decrease,
    Disturbance,
}

/// Identifies one scenario row; unused indices are `u32::MAX`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub family: Family,
    pub sample: u32,
    pub state: u32,
    pub dist: u32,
}

impl std::fmt::Display for RowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.family {
            Family::NonNegative => "non-negativity",
            Family::LowerBound => "lower bound",
            Family::Decrease => "decrease",
            Family::Disturbance => "disturbance gain",
        };
        write!(f, "{name} row of sample {}", self.sample)?;
        if self.state != u32::MAX {
            write!(f, ", abstract state {}", self.state)?;
        }
        if self.dist != u32::MAX {
            write!(f, ", abstract disturbance {}", self.dist)?;
        }
        Ok(())
    }
}

/// Abstract tuples per sample, as flat ids `state · n_dists + dist`; the
/// input is the sample's own.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleSelection {
    pub per_sample: Vec<Vec<u32>>,
}

impl TupleSelection {
    pub fn all(dataset: &Dataset, sm: &SymbolicModel) -> Self {
        let k = (sm.n_states() * sm.n_dists()) as u32;
        Self {
            per_sample: vec![(0..k).collect(); dataset.len()],
        }
    }

    /// Up to `k` distinct tuples per sample, seeded per sample.
    pub fn subsample(dataset: &Dataset, sm: &SymbolicModel, k: usize, seed: u64) -> Self {
        let total = sm.n_states() * sm.n_dists();
        let per_sample = (0..dataset.len())
            .map(|z| {
                if k >= total {
                    return (0..total as u32).collect();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(z as u64);
                let mut v: Vec<u32> = sample_indices(&mut rng, total, k).into_iter().map(|i| i as u32).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Self { per_sample }
    }

    pub fn len(&self) -> usize {
        self.per_sample.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&mut self, z: usize, t: u32) -> bool {
        match self.per_sample[z].binary_search(&t) {
            Ok(_) => false,
            Err(pos) => {
                self.per_sample[z].insert(pos, t);
                true
            }
        }
    }
}

/// Precomputed geometry shared by assembly, scans and residuals.
struct Scenario<'a> {
    dataset: &'a Dataset,
    sm: &'a SymbolicModel,
    basis: &'a BasisSpec,
    states: Vec<Vec<f64>>,
    dists: Vec<Vec<f64>>,
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl<'a> Scenario<'a> {
    fn new(dataset: &'a Dataset, sm: &'a SymbolicModel, basis: &'a BasisSpec) -> Result<Self> {
        if dataset.state_dim() != sm.state_grid().dim() || dataset.dist_dim() != sm.dist_grid().dim() {
            return Err(Error::Assembly("dataset and symbolic model dimensions differ".into()));
        }
        if basis.dim() != sm.state_grid().dim() {
            return Err(Error::Assembly(format!(
                "basis of dimension {} for states of dimension {}",
                basis.dim(),
                sm.state_grid().dim()
            )));
        }
        if let Some((z, p)) = dataset.pairs.iter().enumerate().find(|(_, p)| p.u_index >= sm.n_inputs()) {
            return Err(Error::Assembly(format!(
                "sample {z} uses input index {} outside the symbolic model's {} inputs",
                p.u_index,
                sm.n_inputs()
            )));
        }
        if dataset.pairs.iter().any(|p| {
            p.x.len() != dataset.state_dim() || p.x_next.len() != dataset.state_dim() || p.w.len() != dataset.dist_dim()
        }) {
            return Err(Error::Assembly("sample with inconsistent dimensions".into()));
        }
        Ok(Self {
            dataset,
            sm,
            basis,
            states: sm.state_grid().representatives().collect(),
            dists: sm.dist_grid().representatives().collect(),
        })
    }

    fn keys_of(&self, z: usize, t: u32) -> impl Iterator<Item = RowKey> {
        let n_w = self.sm.n_dists() as u32;
        let (s, j) = (t / n_w, t % n_w);
        let u = self.dataset.pairs[z].u_index;
        let sink = self.sm.successors(s as usize, u)[j as usize] == SINK;
        let z = z as u32;
        let none = u32::MAX;
        [
            Some(RowKey { family: Family::NonNegative, sample: z, state: s, dist: none }),
            Some(RowKey { family: Family::LowerBound, sample: z, state: s, dist: none }),
            (!sink).then_some(RowKey { family: Family::Decrease, sample: z, state: s, dist: j }),
            Some(RowKey { family: Family::Disturbance, sample: z, state: none, dist: j }),
        ]
        .into_iter()
        .flatten()
    }

    fn row(&self, key: RowKey, gamma: f64) -> Row {
        let layout = Layout { r: self.basis.len() };
        let mut c = vec![0.0; layout.len()];
        let pair = &self.dataset.pairs[key.sample as usize];
        match key.family {
            Family::NonNegative | Family::LowerBound => {
                let x_hat = &self.states[key.state as usize];
                for (cj, p) in c.iter_mut().zip(self.basis.eval(&pair.x, x_hat)) {
                    *cj = -p;
                }
                if key.family == Family::LowerBound {
                    c[layout.alpha()] = sq_diff(&pair.x, x_hat);
                }
                c[layout.mu()] = -1.0;
            }
            Family::Decrease => {
                let x_hat = &self.states[key.state as usize];
                let next = self.sm.successors(key.state as usize, pair.u_index)[key.dist as usize];
                let next_hat = &self.states[next as usize];
                let now = self.basis.eval(&pair.x, x_hat);
                let after = self.basis.eval(&pair.x_next, next_hat);
                for j in 0..layout.r {
                    c[j] = after[j] - gamma * now[j];
                }
                c[layout.rho()] = -norm_diff(&pair.w, &self.dists[key.dist as usize]);
                c[layout.psi()] = -1.0;
                c[layout.mu()] = -1.0;
            }
            Family::Disturbance => {
                c[layout.rho()] = norm_diff(&pair.w, &self.dists[key.dist as usize]);
                c[layout.varpi()] = -1.0;
            }
        }
        Row { coeffs: c, rhs: 0.0 }
    }

    /// Evaluates every tuple of every sample at `y`; returns per-family maxima
    /// and, per sample, the `keep` most violated tuples above `tol`.
    fn scan(&self, y: &[f64], gamma: f64, tol: f64, keep: usize) -> (SopResiduals, Vec<(f64, u32, u32)>) {
        let layout = Layout { r: self.basis.len() };
        let q = &y[..layout.r];
        let (alpha, rho, psi, mu, varpi) = (y[layout.alpha()], y[layout.rho()], y[layout.psi()], y[layout.mu()], y[layout.varpi()]);
        let n_s = self.sm.n_states();
        let n_w = self.sm.n_dists();
        self.dataset
            .pairs
            .par_iter()
            .enumerate()
            .map(|(z, pair)| {
                let v_now: Vec<f64> = self.states.iter().map(|xh| self.basis.value(q, &pair.x, xh)).collect();
                let v_next: Vec<f64> = self.states.iter().map(|xh| self.basis.value(q, &pair.x_next, xh)).collect();
                let wd: Vec<f64> = self.dists.iter().map(|wh| norm_diff(&pair.w, wh)).collect();
                let mut res = SopResiduals::empty();
                let mut worst: Vec<(f64, u32, u32)> = Vec::new();
                for s in 0..n_s {
                    let r0 = -v_now[s] - mu;
                    let r3 = alpha * sq_diff(&pair.x, &self.states[s]) - v_now[s] - mu;
                    res.non_negative = res.non_negative.max(r0);
                    res.lower_bound = res.lower_bound.max(r3);
                    let succ = self.sm.successors(s, pair.u_index);
                    for j in 0..n_w {
                        let r5 = rho * wd[j] - varpi;
                        let mut v = r0.max(r3).max(r5);
                        if succ[j] != SINK {
                            let r4 = v_next[succ[j] as usize] - gamma * v_now[s] - rho * wd[j] - psi - mu;
                            res.decrease = res.decrease.max(r4);
                            v = v.max(r4);
                        }
                        res.disturbance = res.disturbance.max(r5);
                        if v > tol {
                            worst.push((v, z as u32, (s * n_w + j) as u32));
                        }
                    }
                }
                if worst.len() > keep {
                    worst.select_nth_unstable_by(keep - 1, |a, b| b.0.total_cmp(&a.0));
                    worst.truncate(keep);
                }
                (res, worst)
            })
            .reduce(
                || (SopResiduals::empty(), Vec::new()),
                |(a, mut va), (b, vb)| {
                    va.extend(vb);
                    (a.merge(&b), va)
                },
            )
    }
}

/// Per-family maximum of `lhs − rhs`; all non-positive for a feasible point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SopResiduals {
    pub non_negative: f64,
    pub lower_bound: f64,
    pub decrease: f64,
    pub disturbance: f64,
}

impl SopResiduals {
    fn empty() -> Self {
        Self {
            non_negative: f64::NEG_INFINITY,
            lower_bound: f64::NEG_INFINITY,
            decrease: f64::NEG_INFINITY,
            disturbance: f64::NEG_INFINITY,
        }
    }

    fn merge(&self, o: &Self) -> Self {
        Self {
            non_negative: self.non_negative.max(o.non_negative),
            lower_bound: self.lower_bound.max(o.lower_bound),
            decrease: self.decrease.max(o.decrease),
            disturbance: self.disturbance.max(o.disturbance),
        }
    }

    pub fn max(&self) -> f64 {
        self.non_negative
            .max(self.lower_bound)
            .max(self.decrease)
            .max(self.disturbance)
    }
}

/// A linear program together with the scenario row behind each of its rows.
#[derive(Clone, Debug)]
pub struct AssembledSop {
    pub lp: LinearProgram,
    pub keys: Vec<RowKey>,
    pub layout: Layout,
}

fn bounds(cfg: &SopConfig, layout: Layout) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![-cfg.q_bound; layout.len()];
    let mut hi = vec![cfg.q_bound; layout.len()];
    for (k, l, h) in [
        (layout.alpha(), cfg.alpha_min, cfg.alpha_max),
        (layout.rho(), 0.0, cfg.rho_max),
        (layout.psi(), cfg.psi_min, cfg.psi_max),
        (layout.mu(), -cfg.mu_bound, cfg.mu_bound),
        (layout.varpi(), cfg.varpi_min, cfg.varpi_max),
    ] {
        lo[k] = l;
        hi[k] = h;
    }
    (lo, hi)
}

fn phase_one_objective(layout: Layout) -> Vec<f64> {
    let mut c = vec![0.0; layout.len()];
    c[layout.mu()] = 1.0;
    c[layout.varpi()] = 1.0;
    c
}

/// The scenario program for one `γ`: four rows per selected tuple (three
/// when the abstract successor is the sink), objective `μ + ϖ`.
pub fn assemble_sop(
    dataset: &Dataset,
    sm: &SymbolicModel,
    basis: &BasisSpec,
    gamma: f64,
    selection: &TupleSelection,
    cfg: &SopConfig,
) -> Result<AssembledSop> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma {gamma} is outside (0,1)")));
    }
    let sc = Scenario::new(dataset, sm, basis)?;
    if selection.per_sample.len() != dataset.len() || selection.is_empty() {
        return Err(Error::Assembly("empty or mismatched abstract-tuple selection".into()));
    }
    let layout = Layout { r: basis.len() };
    let (lo, hi) = bounds(cfg, layout);
    let mut lp = LinearProgram::new(phase_one_objective(layout), lo, hi);
    let mut keys = Vec::new();
    let limit = (sm.n_states() * sm.n_dists()) as u32;
    for (z, tuples) in selection.per_sample.iter().enumerate() {
        for &t in tuples {
            if t >= limit {
                return Err(Error::Assembly(format!("tuple id {t} out of range")));
            }
            for key in sc.keys_of(z, t) {
                lp.rows.push(sc.row(key, gamma));
                keys.push(key);
            }
        }
    }
    Ok(AssembledSop { lp, keys, layout })
}

/// Program with one row per distinct key of the selection.
fn compact_program(sc: &Scenario, gamma: f64, selection: &TupleSelection, cfg: &SopConfig) -> AssembledSop {
    let layout = Layout { r: sc.basis.len() };
    let mut keys: Vec<RowKey> = selection
        .per_sample
        .iter()
        .enumerate()
        .flat_map(|(z, ts)| ts.iter().flat_map(move |&t| sc.keys_of(z, t)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let rows: Vec<Row> = keys.par_iter().map(|k| sc.row(*k, gamma)).collect();
    let (lo, hi) = bounds(cfg, layout);
    let mut lp = LinearProgram::new(phase_one_objective(layout), lo, hi);
    lp.rows = rows;
    AssembledSop { lp, keys, layout }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaObjective {
    pub gamma: f64,
    /// Phase-one optimum over the full tuple set; `None` when infeasible.
    pub objective: Option<f64>,
    pub rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SopDiagnostics {
    pub gamma_scan: Vec<GammaObjective>,
    pub active_tuples: usize,
    pub total_tuples: usize,
    pub lp_rows: usize,
    pub residuals: SopResiduals,
}

/// Coefficients and scalars of a certified ASBF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsbfSolution {
    pub basis: BasisSpec,
    pub q: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub psi: f64,
    pub mu: f64,
    pub varpi: f64,
    pub feasibility_residual: f64,
    pub dataset_digest: String,
    pub diagnostics: Option<SopDiagnostics>,
}

impl AsbfSolution {
    /// `Σ_j q_j p_j(x, x̂)`.
    pub fn evaluate(&self, x: &[f64], x_hat: &[f64]) -> Result<f64> {
        self.basis.check_dims(&self.q, x, x_hat)?;
        Ok(self.basis.value(&self.q, x, x_hat))
    }

    pub fn decision_vector(&self) -> Vec<f64> {
        let mut y = self.q.clone();
        y.extend([self.alpha, self.rho, self.psi, self.mu, self.varpi]);
        y
    }
}

/// Max residual of every scenario row over the full tuple set.
pub fn residuals(sol: &AsbfSolution, dataset: &Dataset, sm: &SymbolicModel) -> Result<SopResiduals> {
    let sc = Scenario::new(dataset, sm, &sol.basis)?;
    if sol.q.len() != sol.basis.len() {
        return Err(Error::InputShape("coefficient count differs from the basis".into()));
    }
    Ok(sc.scan(&sol.decision_vector(), sol.gamma, f64::INFINITY, 1).0)
}

struct PhaseResult {
    y: Vec<f64>,
    objective: f64,
    rounds: usize,
    lp_rows: usize,
}

enum PhaseOutcome {
    Solved(PhaseResult),
    Infeasible,
}

fn cutting_plane(
    sc: &Scenario,
    gamma: f64,
    objective: &[f64],
    extra: &[Row],
    selection: &mut TupleSelection,
    cfg: &SopConfig,
    solver: &dyn LpSolver,
) -> Result<PhaseOutcome> {
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut prog = compact_program(sc, gamma, selection, cfg);
        prog.lp.objective = objective.to_vec();
        prog.lp.rows.extend_from_slice(extra);
        let out = solver.solve(&prog.lp)?;
        match out.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Ok(PhaseOutcome::Infeasible),
            LpStatus::Unbounded => return Err(Error::Lp("bounded scenario program reported unbounded".into())),
        }
        let (_, worst) = sc.scan(&out.x, gamma, cfg.tolerance, cfg.cuts_per_sample);
        let mut worst = worst;
        worst.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut added = 0;
        for &(_, z, t) in &worst {
            if added >= cfg.cuts_per_round {
                break;
            }
            if selection.insert(z as usize, t) {
                added += 1;
            }
        }
        debug!(
            "gamma {gamma}: round {rounds}, {} rows, {} pivots, objective {:.6e}, {} violated tuples, {added} added",
            prog.lp.rows.len(),
            out.iterations,
            out.objective,
            worst.len()
        );
        if added == 0 || rounds >= cfg.max_rounds {
            return Ok(PhaseOutcome::Solved(PhaseResult {
                objective: out.objective,
                y: out.x,
                rounds,
                lp_rows: prog.lp.rows.len(),
            }));
        }
    }
}

/// Raises `μ` and `ϖ` by the residual left over by floating-point rounding
/// so that every row holds over the full tuple set.
fn repair(sc: &Scenario, y: &mut [f64], gamma: f64, layout: Layout) -> SopResiduals {
    for _ in 0..4 {
        let (res, _) = sc.scan(y, gamma, f64::INFINITY, 1);
        let mu_gap = res.non_negative.max(res.lower_bound).max(res.decrease);
        if mu_gap <= 0.0 && res.disturbance <= 0.0 {
            return res;
        }
        if mu_gap > 0.0 {
            y[layout.mu()] += mu_gap;
        }
        if res.disturbance > 0.0 {
            y[layout.varpi()] += res.disturbance;
        }
    }
    sc.scan(y, gamma, f64::INFINITY, 1).0
}

/// Least-infeasible point: minimizes a common elastic slack on all rows.
fn most_violated(sc: &Scenario, gamma: f64, selection: &TupleSelection, cfg: &SopConfig, solver: &dyn LpSolver) -> Result<Error> {
    let prog = compact_program(sc, gamma, selection, cfg);
    let n = prog.layout.len();
    let mut lp = LinearProgram::new(vec![0.0; n + 1], prog.lp.lower.clone(), prog.lp.upper.clone());
    lp.objective[n] = 1.0;
    lp.lower.push(0.0);
    lp.upper.push(f64::INFINITY);
    for row in &prog.lp.rows {
        let mut c = row.coeffs.clone();
        c.push(-1.0);
        lp.push(c, row.rhs);
    }
    let out = solver.solve(&lp)?;
    if out.status != LpStatus::Optimal {
        return Ok(Error::Infeasible {
            row: "elastic program failed".into(),
            violation: f64::INFINITY,
        });
    }
    let y = &out.x[..n];
    let (i, v) = prog
        .lp
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, lp::dot(&r.coeffs, y) - r.rhs))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::NAN));
    Ok(Error::Infeasible {
        row: format!("{} at gamma {gamma}", prog.keys[i]),
        violation: v,
    })
}

fn bound_row(layout: Layout, vars: &[usize], rhs: f64) -> Row {
    let mut c = vec![0.0; layout.len()];
    for &v in vars {
        c[v] = 1.0;
    }
    Row { coeffs: c, rhs }
}

/// Grid search over `γ` with the three-phase lexicographic objective.
pub fn solve_sop(
    dataset: &Dataset,
    sm: &SymbolicModel,
    basis: &BasisSpec,
    cfg: &SopConfig,
    solver: &dyn LpSolver,
) -> Result<AsbfSolution> {
    cfg.validate()?;
    dataset.check_coverage()?;
    let sc = Scenario::new(dataset, sm, basis)?;
    let layout = Layout { r: basis.len() };
    let initial = TupleSelection::subsample(dataset, sm, cfg.initial_tuples, cfg.seed);
    if initial.is_empty() {
        return Err(Error::Assembly("no abstract tuples to constrain".into()));
    }
    let objective = phase_one_objective(layout);

    let scans: Vec<(f64, Result<(PhaseOutcome, TupleSelection)>)> = cfg
        .gamma_grid
        .par_iter()
        .map(|&gamma| {
            let mut sel = initial.clone();
            let r = cutting_plane(&sc, gamma, &objective, &[], &mut sel, cfg, solver).map(|o| (o, sel));
            (gamma, r)
        })
        .collect();

    let mut gamma_scan = Vec::new();
    let mut best: Option<(f64, PhaseResult, TupleSelection)> = None;
    for (gamma, r) in scans {
        let (outcome, sel) = r?;
        match outcome {
            PhaseOutcome::Solved(p) => {
                gamma_scan.push(GammaObjective {
                    gamma,
                    objective: Some(p.objective),
                    rounds: p.rounds,
                });
                if best.as_ref().map_or(true, |(_, b, _)| p.objective < b.objective) {
                    best = Some((gamma, p, sel));
                }
            }
            PhaseOutcome::Infeasible => gamma_scan.push(GammaObjective {
                gamma,
                objective: None,
                rounds: 0,
            }),
        }
    }
    let Some((gamma, phase1, mut sel)) = best else {
        return Err(most_violated(&sc, cfg.gamma_grid[0], &initial, cfg, solver)?);
    };
    info!("selected gamma {gamma} with phase-one objective {:.6e}", phase1.objective);

    let cap1 = bound_row(layout, &[layout.mu(), layout.varpi()], phase1.objective + cfg.phase_slack);
    let mut psi_obj = vec![0.0; layout.len()];
    psi_obj[layout.psi()] = 1.0;
    let mut y = phase1.y;
    let mut rounds = phase1.rounds;
    let mut lp_rows = phase1.lp_rows;
    if let PhaseOutcome::Solved(p2) = cutting_plane(&sc, gamma, &psi_obj, &[cap1.clone()], &mut sel, cfg, solver)? {
        let cap2 = bound_row(layout, &[layout.psi()], p2.objective + cfg.phase_slack);
        let mut alpha_obj = vec![0.0; layout.len()];
        alpha_obj[layout.alpha()] = -1.0;
        rounds += p2.rounds;
        lp_rows = p2.lp_rows;
        y = p2.y;
        if let PhaseOutcome::Solved(p3) = cutting_plane(&sc, gamma, &alpha_obj, &[cap1, cap2], &mut sel, cfg, solver)? {
            rounds += p3.rounds;
            lp_rows = p3.lp_rows;
            y = p3.y;
        }
    }
    debug!("phases finished after {rounds} cutting-plane rounds");
    let res = repair(&sc, &mut y, gamma, layout);
    let solution = AsbfSolution {
        basis: basis.clone(),
        q: y[..layout.r].to_vec(),
        alpha: y[layout.alpha()],
        gamma,
        rho: y[layout.rho()],
        psi: y[layout.psi()],
        mu: y[layout.mu()],
        varpi: y[layout.varpi()],
        feasibility_residual: res.max(),
        dataset_digest: dataset.digest(),
        diagnostics: Some(SopDiagnostics {
            gamma_scan,
            active_tuples: sel.len(),
            total_tuples: dataset.len() * sm.n_states() * sm.n_dists(),
            lp_rows,
            residuals: res,
        }),
    };
    Ok(solution)
}

#[cfg(test)]
mod tests;
