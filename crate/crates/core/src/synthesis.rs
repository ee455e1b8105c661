//! Safety controllers on symbolic models and their refinement to the
//! concrete network.

use std::borrow::Borrow;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{write_grid, Reader, SymbolicModel, SINK};
use crate::blackbox::NetworkOracle;
use crate::certificate::AsbfSolution;
use crate::error::{Error, Result};
use crate::gridding::{AxisBox, UniformGrid};

const MAGIC: &[u8; 4] = b"CTL1";

/// Cells whose representative lies in `safe_box` shrunk by `epsilon` on every face.
pub fn contract_safe_set(safe_box: &AxisBox, grid: &UniformGrid, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("contraction margin must be >= 0, got {epsilon}")));
    }
    if safe_box.dim() != grid.dim() {
        return Err(Error::InputShape(format!(
            "safe box has dimension {}, grid {}",
            safe_box.dim(),
            grid.dim()
        )));
    }
    if safe_box.widths().iter().any(|w| 2.0 * epsilon >= *w) {
        warn!("margin {epsilon} collapses the safe box; no cell survives");
        return Ok(Vec::new());
    }
    let lo: Vec<f64> = safe_box.lower().iter().map(|v| v + epsilon).collect();
    let hi: Vec<f64> = safe_box.upper().iter().map(|v| v - epsilon).collect();
    let tol = 1e-12;
    let mut rep = vec![0.0; grid.dim()];
    Ok((0..grid.len())
        .filter(|&s| {
            grid.representative_into(s, &mut rep);
            rep.iter().enumerate().all(|(k, v)| *v >= lo[k] - tol && *v <= hi[k] + tol)
        })
        .collect())
}

pub struct SafetyGame<'a> {
    model: &'a SymbolicModel,
    safe: Vec<bool>,
}

impl<'a> SafetyGame<'a> {
    pub fn new(model: &'a SymbolicModel, safe_indices: &[usize]) -> Result<Self> {
        let mut safe = vec![false; model.n_states()];
        for &s in safe_indices {
            *safe
                .get_mut(s)
                .ok_or_else(|| Error::Index(format!("safe state {s} of {}", model.n_states())))? = true;
        }
        Ok(Self { model, safe })
    }

    pub fn model(&self) -> &SymbolicModel {
        self.model
    }

    pub fn is_safe(&self, s: usize) -> bool {
        self.safe[s]
    }
}

/// Winning states with their allowed inputs, stored as one bitmask per state.
#[derive(Clone, Debug, PartialEq)]
pub struct AbstractController {
    state_grid: UniformGrid,
    inputs: Vec<Vec<f64>>,
    words: usize,
    masks: Vec<u64>,
}

impl AbstractController {
    fn empty(state_grid: UniformGrid, inputs: Vec<Vec<f64>>) -> Self {
        let words = inputs.len().div_ceil(64);
        let masks = vec![0; state_grid.len() * words];
        Self {
            state_grid,
            inputs,
            words,
            masks,
        }
    }

    fn allow(&mut self, s: usize, u: usize) {
        self.masks[s * self.words + u / 64] |= 1 << (u % 64);
    }

    pub fn state_grid(&self) -> &UniformGrid {
        &self.state_grid
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn n_states(&self) -> usize {
        self.state_grid.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn allows(&self, s: usize, u: usize) -> bool {
        self.masks[s * self.words + u / 64] >> (u % 64) & 1 == 1
    }

    pub fn is_winning(&self, s: usize) -> bool {
        self.masks[s * self.words..(s + 1) * self.words].iter().any(|w| *w != 0)
    }

    pub fn allowed(&self, s: usize) -> Vec<usize> {
        (0..self.n_inputs()).filter(|&u| self.allows(s, u)).collect()
    }

    /// Lowest allowed input index.
    pub fn first_allowed(&self, s: usize) -> Option<usize> {
        let row = &self.masks[s * self.words..(s + 1) * self.words];
        row.iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn winning(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.is_winning(s)).collect()
    }

    pub fn winning_count(&self) -> usize {
        (0..self.n_states()).filter(|&s| self.is_winning(s)).count()
    }

    /// Input index for a concrete state: the lowest allowed input of its cell.
    pub fn refine_index(&self, x: &[f64]) -> Result<usize> {
        let cell = self.state_grid.cell_of(x);
        cell.and_then(|s| self.first_allowed(s)).ok_or(Error::Uncontrollable { cell })
    }

    pub fn refine(&self, x: &[f64]) -> Result<&[f64]> {
        Ok(&self.inputs[self.refine_index(x)?])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let bytes_per_state = self.n_inputs().div_ceil(8);
        let mut out = Vec::with_capacity(64 + bytes_per_state * self.n_states());
        out.extend_from_slice(MAGIC);
        for v in [self.state_grid.dim(), self.inputs[0].len(), self.n_inputs()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        write_grid(&mut out, &self.state_grid);
        for u in &self.inputs {
            for v in u {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for s in 0..self.n_states() {
            let mut row = vec![0u8; bytes_per_state];
            for u in 0..self.n_inputs() {
                if self.allows(s, u) {
                    row[u / 8] |= 1 << (u % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        r.magic(MAGIC)?;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let n_inputs = r.u32()? as usize;
        if n == 0 || m == 0 || n_inputs == 0 {
            return Err(r.error("zero dimension in header".into()));
        }
        let grid = r.grid(n)?;
        let inputs = (0..n_inputs)
            .map(|_| (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut ctl = Self::empty(grid, inputs);
        let bytes_per_state = n_inputs.div_ceil(8);
        for s in 0..ctl.n_states() {
            let row = r.take(bytes_per_state)?;
            for u in 0..n_inputs {
                if row[u / 8] >> (u % 8) & 1 == 1 {
                    ctl.allow(s, u);
                }
            }
            let rem = n_inputs % 8;
            if rem != 0 && row[bytes_per_state - 1] >> rem != 0 {
                return Err(r.error(format!("padding bits set for state {s}")));
            }
        }
        r.finish()?;
        Ok(ctl)
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        crate::sampling::hex_digest(h)
    }
}

/// Maximal fixed point `W ↦ {s ∈ W : ∃u ∀w, f̂(s,u,w) ∈ W}` by a worklist over
/// predecessor lists; every state is removed at most once.
pub fn solve_safety_game(game: &SafetyGame) -> AbstractController {
    let sm = game.model;
    let (ns, nu, nw) = (sm.n_states(), sm.n_inputs(), sm.n_dists());
    let mut win = game.safe.clone();

    // predecessors of t as (s, u) pairs, one entry per distinct pair
    let mut pred_count = vec![0usize; ns + 1];
    for s in 0..ns {
        for u in 0..nu {
            let succ = sm.successors(s, u);
            for (j, &t) in succ.iter().enumerate() {
                if t != SINK && !succ[..j].contains(&t) {
                    pred_count[t as usize + 1] += 1;
                }
            }
        }
    }
    for t in 0..ns {
        pred_count[t + 1] += pred_count[t];
    }
    let starts = pred_count.clone();
    let mut fill = pred_count;
    let mut preds = vec![0u32; starts[ns]];
    for s in 0..ns {
        for u in 0..nu {
            let succ = sm.successors(s, u);
            for (j, &t) in succ.iter().enumerate() {
                if t != SINK && !succ[..j].contains(&t) {
                    preds[fill[t as usize]] = (s * nu + u) as u32;
                    fill[t as usize] += 1;
                }
            }
        }
    }

    let mut ok = vec![false; ns * nu];
    let mut count = vec![0usize; ns];
    let mut queue = Vec::new();
    for s in 0..ns {
        if !win[s] {
            continue;
        }
        for u in 0..nu {
            let good = sm.successors(s, u).iter().all(|&t| t != SINK && win[t as usize]);
            ok[s * nu + u] = good;
            count[s] += good as usize;
        }
        if count[s] == 0 {
            queue.push(s);
        }
    }
    while let Some(t) = queue.pop() {
        if !win[t] {
            continue;
        }
        win[t] = false;
        for &p in &preds[starts[t]..starts[t + 1]] {
            let (s, u) = (p as usize / nu, p as usize % nu);
            if win[s] && ok[s * nu + u] {
                ok[s * nu + u] = false;
                count[s] -= 1;
                if count[s] == 0 {
                    queue.push(s);
                }
            }
        }
    }
    debug_assert!(nw > 0);

    let mut ctl = AbstractController::empty(sm.state_grid().clone(), sm.inputs().to_vec());
    for s in (0..ns).filter(|&s| win[s]) {
        for u in 0..nu {
            if ok[s * nu + u] {
                ctl.allow(s, u);
            }
        }
    }
    ctl
}

/// Adds every candidate outside the controller's winning set that can enter it
/// in one step under all disturbances; such states get the inputs that do so.
pub fn extend_with_entry_layer(sm: &SymbolicModel, core: &AbstractController, candidates: &[usize]) -> Result<AbstractController> {
    let mut out = core.clone();
    for &s in candidates {
        if s >= sm.n_states() {
            return Err(Error::Index(format!("candidate state {s} of {}", sm.n_states())));
        }
        if core.is_winning(s) {
            continue;
        }
        for u in 0..sm.n_inputs() {
            if sm.successors(s, u).iter().all(|&t| t != SINK && core.is_winning(t as usize)) {
                out.allow(s, u);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub margin: f64,
    pub safe_cells: usize,
    pub contracted_cells: usize,
    pub core_cells: usize,
    pub entry_cells: usize,
}

/// Game on the safe set contracted by `margin`, then one entry layer over the
/// uncontracted safe cells.
pub fn synthesize(sm: &SymbolicModel, safe_box: &AxisBox, margin: f64) -> Result<(AbstractController, SynthesisSummary)> {
    let safe = contract_safe_set(safe_box, sm.state_grid(), 0.0)?;
    let contracted = contract_safe_set(safe_box, sm.state_grid(), margin)?;
    let core = solve_safety_game(&SafetyGame::new(sm, &contracted)?);
    let ctl = extend_with_entry_layer(sm, &core, &safe)?;
    let core_cells = core.winning_count();
    let summary = SynthesisSummary {
        margin,
        safe_cells: safe.len(),
        contracted_cells: contracted.len(),
        core_cells,
        entry_cells: ctl.winning_count() - core_cells,
    };
    Ok((ctl, summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    LeftSafeSet,
    Uncontrollable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub subsystem: usize,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub k: usize,
    pub subsystem: usize,
    pub x: Vec<f64>,
    pub u_index: Option<usize>,
    pub safe: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRun {
    pub safe: bool,
    pub violation: Option<Violation>,
    pub log: Vec<LogRow>,
}

/// Runs the network under the refined controllers. Only the subsystems listed
/// in `record` are logged.
pub fn simulate_closed_loop<C: Borrow<AbstractController>, B: Borrow<AxisBox>>(
    network: &NetworkOracle,
    controllers: &[C],
    safe_boxes: &[B],
    x0: &[f64],
    horizon: usize,
    record: &[usize],
) -> Result<ClosedLoopRun> {
    let m = network.len();
    if controllers.len() != m || safe_boxes.len() != m {
        return Err(Error::InputShape(format!(
            "{} controllers and {} safe boxes for {m} subsystems",
            controllers.len(),
            safe_boxes.len()
        )));
    }
    if x0.len() != network.state_dim() {
        return Err(Error::InputShape(format!(
            "initial state has length {}, network state {}",
            x0.len(),
            network.state_dim()
        )));
    }
    let mut run = ClosedLoopRun {
        safe: true,
        violation: None,
        log: Vec::new(),
    };
    if horizon == 0 {
        return Ok(run);
    }
    let mut x = x0.to_vec();
    let mut u = vec![0usize; m];
    for k in 0..=horizon {
        let mut first: Option<Violation> = None;
        for i in 0..m {
            let xi = &x[network.state_range(i)];
            let inside = safe_boxes[i].borrow().contains(xi);
            let ui = if k < horizon {
                controllers[i].borrow().refine_index(xi).ok()
            } else {
                None
            };
            if first.is_none() {
                if !inside {
                    first = Some(Violation {
                        step: k,
                        subsystem: i,
                        kind: ViolationKind::LeftSafeSet,
                    });
                } else if k < horizon && ui.is_none() {
                    first = Some(Violation {
                        step: k,
                        subsystem: i,
                        kind: ViolationKind::Uncontrollable,
                    });
                }
            }
            if record.contains(&i) {
                run.log.push(LogRow {
                    k,
                    subsystem: i,
                    x: xi.to_vec(),
                    u_index: ui,
                    safe: inside,
                });
            }
            u[i] = ui.unwrap_or(0);
        }
        if let Some(v) = first {
            run.safe = false;
            run.violation = Some(v);
            break;
        }
        if k < horizon {
            x = network.step_indices(&x, &u)?;
        }
    }
    Ok(run)
}

/// `k, subsystem, x_0.., u_index, safe_flag`; the last step has no input.
pub fn trajectory_csv(rows: &[LogRow], state_dim: usize) -> String {
    let mut out = String::from("k,subsystem");
    for k in 0..state_dim {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",u_index,safe_flag\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.k, r.subsystem));
        for v in &r.x {
            out.push_str(&format!(",{v:?}"));
        }
        match r.u_index {
            Some(u) => out.push_str(&format!(",{u}")),
            None => out.push(','),
        }
        out.push_str(if r.safe { ",1\n" } else { ",0\n" });
    }
    out
}

/// Rule for the abstract disturbance in coupled runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceChoice {
    /// Nearest representative of the concrete disturbance `g(x)`.
    QuantizedTrue,
    /// Nearest representative of `g(x̂)`, the interconnection applied to the abstract states.
    AbstractNeighbors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub choice: DisturbanceChoice,
    pub steps: usize,
    /// Largest `V(x_k, x̂_k)` seen.
    pub max_value: f64,
    /// Largest `‖x_k − x̂_k‖` seen.
    pub max_distance: f64,
    /// An abstract successor left the grid.
    pub abstract_escape: bool,
}

/// Steps the concrete network and the product of symbolic models side by side
/// with shared inputs. `x_hat0` must consist of representatives.
#[allow(clippy::too_many_arguments)]
pub fn coupled_run<S, M, C>(
    network: &NetworkOracle,
    models: &[M],
    solutions: &[S],
    controllers: &[C],
    x0: &[f64],
    x_hat0: &[f64],
    horizon: usize,
    choice: DisturbanceChoice,
) -> Result<CoupledRun>
where
    S: Borrow<AsbfSolution>,
    M: Borrow<SymbolicModel>,
    C: Borrow<AbstractController>,
{
    let m = network.len();
    if models.len() != m || solutions.len() != m || controllers.len() != m {
        return Err(Error::InputShape(format!("coupled run needs {m} models, certificates and controllers")));
    }
    let n = network.state_dim();
    if x0.len() != n || x_hat0.len() != n {
        return Err(Error::InputShape("initial states do not match the network".into()));
    }
    let mut cells = Vec::with_capacity(m);
    for i in 0..m {
        let g = models[i].borrow().state_grid();
        let xi = &x_hat0[network.state_range(i)];
        let s = g
            .cell_of(xi)
            .ok_or_else(|| Error::Domain(format!("abstract start of subsystem {i} is outside the grid")))?;
        cells.push(s);
    }
    let (mut x, mut x_hat) = (x0.to_vec(), x_hat0.to_vec());
    let measure = |x: &[f64], x_hat: &[f64]| -> Result<(f64, f64)> {
        let v = crate::composition::evaluate_abf(solutions, x, x_hat)?;
        let d = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok((v, d))
    };
    let (v0, d0) = measure(&x, &x_hat)?;
    let mut run = CoupledRun {
        choice,
        steps: 0,
        max_value: v0,
        max_distance: d0,
        abstract_escape: false,
    };
    let mut u = vec![0usize; m];
    for _ in 0..horizon {
        for i in 0..m {
            let ctl = controllers[i].borrow();
            u[i] = ctl
                .first_allowed(cells[i])
                .or_else(|| ctl.refine_index(&x[network.state_range(i)]).ok())
                .unwrap_or(0);
        }
        let w = match choice {
            DisturbanceChoice::QuantizedTrue => network.disturbances(&x)?,
            DisturbanceChoice::AbstractNeighbors => network.disturbances(&x_hat)?,
        };
        let x_next = network.step_indices(&x, &u)?;
        for i in 0..m {
            let sm = models[i].borrow();
            let j = sm.dist_grid().nearest_cell(&w[network.dist_range(i)]);
            let t = sm.abstract_step(cells[i] as u32, u[i], j)?;
            if t == SINK {
                run.abstract_escape = true;
                return Ok(run);
            }
            cells[i] = t as usize;
            sm.state_grid().representative_into(cells[i], &mut x_hat[network.state_range(i)]);
        }
        x = x_next;
        run.steps += 1;
        let (v, d) = measure(&x, &x_hat)?;
        run.max_value = run.max_value.max(v);
        run.max_distance = run.max_distance.max(d);
    }
    Ok(run)
}

/// Parallel closed-loop runs from several initial states, logging nothing.
pub fn monte_carlo<C, B>(network: &NetworkOracle, controllers: &[C], safe_boxes: &[B], starts: &[Vec<f64>], horizon: usize) -> Result<Vec<ClosedLoopRun>>
where
    C: Borrow<AbstractController> + Sync,
    B: Borrow<AxisBox> + Sync,
{
    starts
        .par_iter()
        .map(|x0| simulate_closed_loop(network, controllers, safe_boxes, x0, horizon, &[]))
        .collect()
}
