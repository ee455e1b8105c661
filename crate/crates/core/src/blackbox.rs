//! Opaque one-step simulation oracles.
//!
//! Everything downstream of this module only sees input/output pairs of
//! [`SubsystemOracle::step`]; the benchmark constructors below hide their
//! coefficients and topology behind the same interface.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridding::AxisBox;

/// `(x, u, w, out)`: writes `f(x, u, w)` into `out`.
pub type StepFn = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;

/// `(x_stacked, w_stacked_out)`: the interconnection map `g`.
pub type InterconnectFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Black-box access to one subsystem `x+ = f(x, u, w)` with a finite input set.
#[derive(Clone)]
pub struct SubsystemOracle {
    state_dim: usize,
    dist_dim: usize,
    inputs: Vec<Vec<f64>>,
    step: Arc<StepFn>,
}

impl fmt::Debug for SubsystemOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubsystemOracle")
            .field("state_dim", &self.state_dim)
            .field("dist_dim", &self.dist_dim)
            .field("inputs", &self.inputs.len())
            .finish_non_exhaustive()
    }
}

impl SubsystemOracle {
    pub fn new(
        state_dim: usize,
        dist_dim: usize,
        inputs: Vec<Vec<f64>>,
        step: Arc<StepFn>,
    ) -> Result<Self> {
        if state_dim == 0 || dist_dim == 0 {
            return Err(Error::Config(
                "state and disturbance dimensions must be positive".into(),
            ));
        }
        if inputs.is_empty() {
            return Err(Error::Config("input set must not be empty".into()));
        }
        let input_dim = inputs[0].len();
        if inputs.iter().any(|u| u.len() != input_dim || u.is_empty()) {
            return Err(Error::Config("input vectors must share a positive length".into()));
        }
        for (i, a) in inputs.iter().enumerate() {
            if inputs[..i].contains(a) {
                return Err(Error::Config(format!("duplicate input vector {a:?}")));
            }
        }
        Ok(Self {
            state_dim,
            dist_dim,
            inputs,
            step,
        })
    }

    pub fn from_fn<F>(state_dim: usize, dist_dim: usize, inputs: Vec<Vec<f64>>, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(state_dim, dist_dim, inputs, Arc::new(f))
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn dist_dim(&self) -> usize {
        self.dist_dim
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn input_index(&self, u: &[f64]) -> Option<usize> {
        self.inputs.iter().position(|v| v.as_slice() == u)
    }

    /// One step `f(x, u, w)` with full argument validation.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, w)?;
        if u.len() != self.input_dim() {
            return Err(Error::InputShape(format!(
                "input has length {}, expected {}",
                u.len(),
                self.input_dim()
            )));
        }
        if self.input_index(u).is_none() {
            return Err(Error::InvalidInput(u.to_vec()));
        }
        let mut out = vec![0.0; self.state_dim];
        (self.step)(x, u, w, &mut out);
        Ok(out)
    }

    /// One step with the input given by its index; shapes are validated.
    pub fn step_index(&self, x: &[f64], u_index: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, w)?;
        let u = self
            .inputs
            .get(u_index)
            .ok_or_else(|| Error::Index(format!("input index {u_index}")))?;
        let mut out = vec![0.0; self.state_dim];
        (self.step)(x, u, w, &mut out);
        Ok(out)
    }

    /// Unchecked hot-path variant used by the samplers and the abstraction.
    #[inline]
    pub(crate) fn step_into(&self, x: &[f64], u_index: usize, w: &[f64], out: &mut [f64]) {
        (self.step)(x, &self.inputs[u_index], w, out)
    }

    fn check_shapes(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::InputShape(format!(
                "state has length {}, expected {}",
                x.len(),
                self.state_dim
            )));
        }
        if w.len() != self.dist_dim {
            return Err(Error::InputShape(format!(
                "disturbance has length {}, expected {}",
                w.len(),
                self.dist_dim
            )));
        }
        Ok(())
    }
}

/// Network of subsystems coupled through an opaque interconnection map.
#[derive(Clone)]
pub struct NetworkOracle {
    subsystems: Vec<SubsystemOracle>,
    interconnect: Arc<InterconnectFn>,
    state_offsets: Vec<usize>,
    dist_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
}

impl fmt::Debug for NetworkOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkOracle")
            .field("subsystems", &self.subsystems.len())
            .finish_non_exhaustive()
    }
}

fn offsets(lens: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut acc = 0;
    let mut out = vec![0];
    for l in lens {
        acc += l;
        out.push(acc);
    }
    out
}

impl NetworkOracle {
    pub fn new(subsystems: Vec<SubsystemOracle>, interconnect: Arc<InterconnectFn>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::Config("a network needs at least one subsystem".into()));
        }
        let state_offsets = offsets(subsystems.iter().map(|s| s.state_dim));
        let dist_offsets = offsets(subsystems.iter().map(|s| s.dist_dim));
        let input_offsets = offsets(subsystems.iter().map(|s| s.input_dim()));
        Ok(Self {
            subsystems,
            interconnect,
            state_offsets,
            dist_offsets,
            input_offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystems(&self) -> &[SubsystemOracle] {
        &self.subsystems
    }

    pub fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn dist_dim(&self) -> usize {
        *self.dist_offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn dist_range(&self, i: usize) -> std::ops::Range<usize> {
        self.dist_offsets[i]..self.dist_offsets[i + 1]
    }

    /// Evaluates the interconnection map `w = g(x)`.
    pub fn disturbances(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::InputShape(format!(
                "stacked state has length {}, expected {}",
                x.len(),
                self.state_dim()
            )));
        }
        let mut w = vec![0.0; self.dist_dim()];
        (self.interconnect)(x, &mut w);
        Ok(w)
    }

    /// Network step with stacked input vectors.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.input_dim() {
            return Err(Error::InputShape(format!(
                "stacked input has length {}, expected {}",
                u.len(),
                self.input_dim()
            )));
        }
        let mut idx = Vec::with_capacity(self.len());
        for (i, s) in self.subsystems.iter().enumerate() {
            let ui = &u[self.input_offsets[i]..self.input_offsets[i + 1]];
            idx.push(s.input_index(ui).ok_or_else(|| Error::InvalidInput(ui.to_vec()))?);
        }
        self.step_indices(x, &idx)
    }

    /// Network step with one input index per subsystem.
    pub fn step_indices(&self, x: &[f64], u_indices: &[usize]) -> Result<Vec<f64>> {
        if u_indices.len() != self.len() {
            return Err(Error::InputShape(format!(
                "{} input indices for {} subsystems",
                u_indices.len(),
                self.len()
            )));
        }
        let w = self.disturbances(x)?;
        let mut out = vec![0.0; self.state_dim()];
        for (i, s) in self.subsystems.iter().enumerate() {
            let ui = u_indices[i];
            if ui >= s.inputs.len() {
                return Err(Error::Index(format!("input index {ui} for subsystem {i}")));
            }
            let xr = self.state_range(i);
            s.step_into(&x[xr.clone()], ui, &w[self.dist_range(i)], &mut out[xr]);
        }
        Ok(out)
    }
}

/// Adjacency of the room benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Ring,
    Line,
    /// Random graph of maximum degree two drawn from the seed.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomNetworkConfig {
    /// Overwritten by the network size when embedded in a pipeline config.
    #[serde(default)]
    pub rooms: usize,
    /// Heat exchange between adjacent rooms.
    #[serde(default = "RoomNetworkConfig::default_exchange")]
    pub exchange: f64,
    /// Exchange with the environment.
    #[serde(default = "RoomNetworkConfig::default_wall")]
    pub wall: f64,
    /// Cooler coefficient.
    #[serde(default = "RoomNetworkConfig::default_cooler")]
    pub cooler: f64,
    #[serde(default = "RoomNetworkConfig::default_cooler_temp")]
    pub cooler_temp: f64,
    #[serde(default = "RoomNetworkConfig::default_external_temp")]
    pub external_temp: f64,
    #[serde(default = "RoomNetworkConfig::default_inputs")]
    pub inputs: Vec<f64>,
    #[serde(default = "RoomNetworkConfig::default_topology")]
    pub topology: Topology,
}

impl RoomNetworkConfig {
    fn default_exchange() -> f64 {
        0.005
    }
    fn default_wall() -> f64 {
        0.01
    }
    fn default_cooler() -> f64 {
        0.06
    }
    fn default_cooler_temp() -> f64 {
        5.0
    }
    fn default_external_temp() -> f64 {
        -2.0
    }
    fn default_inputs() -> Vec<f64> {
        vec![0.0, 1.0]
    }
    fn default_topology() -> Topology {
        Topology::Ring
    }

    pub fn new(rooms: usize) -> Self {
        Self {
            rooms,
            exchange: Self::default_exchange(),
            wall: Self::default_wall(),
            cooler: Self::default_cooler(),
            cooler_temp: Self::default_cooler_temp(),
            external_temp: Self::default_external_temp(),
            inputs: Self::default_inputs(),
            topology: Self::default_topology(),
        }
    }

    /// Diagonal coefficient `1 - 2*exchange - wall - cooler*u`.
    pub fn diagonal(&self, u: f64) -> f64 {
        1.0 - 2.0 * self.exchange - self.wall - self.cooler * u
    }

    pub fn validate(&self) -> Result<()> {
        if self.rooms == 0 {
            return Err(Error::Config("room network needs at least one room".into()));
        }
        if self.inputs.is_empty() {
            return Err(Error::Config("room input set is empty".into()));
        }
        for &u in &self.inputs {
            let a = self.diagonal(u);
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!(
                    "non-contractive room dynamics: diagonal {a} for input {u}"
                )));
            }
        }
        Ok(())
    }

    /// Neighbor lists; only the black-box network reads them.
    fn neighbors(&self) -> Vec<Vec<usize>> {
        let m = self.rooms;
        let mut adj = vec![Vec::new(); m];
        let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        };
        match self.topology {
            Topology::Ring => {
                for i in 0..m {
                    link(i, (i + 1) % m, &mut adj);
                }
            }
            Topology::Line => {
                for i in 1..m {
                    link(i - 1, i, &mut adj);
                }
            }
            Topology::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut order: Vec<usize> = (0..m).collect();
                order.shuffle(&mut rng);
                for pair in order.windows(2) {
                    if rng.gen_bool(0.7) {
                        link(pair[0], pair[1], &mut adj);
                    }
                }
            }
        }
        for n in &mut adj {
            n.sort_unstable();
        }
        adj
    }
}

/// Subsystem oracle of one room: `x+ = a(u) x + exchange*w + cooler*Tc*u + wall*Te`.
pub fn room_subsystem(cfg: &RoomNetworkConfig) -> Result<SubsystemOracle> {
    cfg.validate()?;
    let c = cfg.clone();
    SubsystemOracle::from_fn(
        1,
        1,
        cfg.inputs.iter().map(|u| vec![*u]).collect(),
        move |x, u, w, out| {
            out[0] = c.diagonal(u[0]) * x[0]
                + c.exchange * w[0]
                + c.cooler * c.cooler_temp * u[0]
                + c.wall * c.external_temp;
        },
    )
}

/// Room temperature network; `w_i` is the sum of the neighbors' temperatures.
pub fn make_room_network(cfg: &RoomNetworkConfig) -> Result<NetworkOracle> {
    let room = room_subsystem(cfg)?;
    let adj = cfg.neighbors();
    let interconnect = move |x: &[f64], w: &mut [f64]| {
        for (i, n) in adj.iter().enumerate() {
            w[i] = n.iter().map(|&j| x[j]).sum();
        }
    };
    NetworkOracle::new(vec![room; cfg.rooms], Arc::new(interconnect))
}

/// Vehicle platoon; state `[d, v]`, `x+ = A x + u + Aw w` with `w_i = x_{i-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleNetworkConfig {
    #[serde(default)]
    pub vehicles: usize,
    /// Interconnection strength.
    #[serde(default = "VehicleNetworkConfig::default_tau")]
    pub tau: f64,
    /// Per-coordinate input levels; the input set is their Cartesian square.
    #[serde(default = "VehicleNetworkConfig::default_levels")]
    pub input_levels: Vec<f64>,
}

impl VehicleNetworkConfig {
    fn default_tau() -> f64 {
        0.005
    }

    /// `{-1, -0.8, ..., 1}`.
    pub fn default_levels() -> Vec<f64> {
        (0..=10).map(|k| (k as f64 - 5.0) / 5.0).collect()
    }

    pub fn new(vehicles: usize) -> Self {
        Self {
            vehicles,
            tau: Self::default_tau(),
            input_levels: Self::default_levels(),
        }
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.input_levels.len().pow(2));
        for a in &self.input_levels {
            for b in &self.input_levels {
                out.push(vec![*a, *b]);
            }
        }
        out
    }
}

pub const VEHICLE_DRIFT: [[f64; 2]; 2] = [[1.0, -1.0], [0.0, 1.0]];

pub fn vehicle_coupling(tau: f64) -> [[f64; 2]; 2] {
    [[0.0, tau], [0.0, 0.0]]
}

pub fn vehicle_subsystem(cfg: &VehicleNetworkConfig) -> Result<SubsystemOracle> {
    let a = VEHICLE_DRIFT;
    let aw = vehicle_coupling(cfg.tau);
    SubsystemOracle::from_fn(2, 2, cfg.inputs(), move |x, u, w, out| {
        for r in 0..2 {
            out[r] = a[r][0] * x[0] + a[r][1] * x[1] + u[r] + aw[r][0] * w[0] + aw[r][1] * w[1];
        }
    })
}

pub fn make_vehicle_network(cfg: &VehicleNetworkConfig) -> Result<NetworkOracle> {
    if cfg.vehicles == 0 {
        return Err(Error::Config("vehicle network needs at least one vehicle".into()));
    }
    let veh = vehicle_subsystem(cfg)?;
    let interconnect = |x: &[f64], w: &mut [f64]| {
        w[0] = 0.0;
        w[1] = 0.0;
        for i in 1..x.len() / 2 {
            w[2 * i] = x[2 * (i - 1)];
            w[2 * i + 1] = x[2 * (i - 1) + 1];
        }
    };
    NetworkOracle::new(vec![veh; cfg.vehicles], Arc::new(interconnect))
}

/// Default per-subsystem domains: `(state box, disturbance box)`.
pub fn room_domains() -> (AxisBox, AxisBox) {
    (
        AxisBox::new(vec![-0.5], vec![0.5]).expect("static box"),
        AxisBox::new(vec![-1.0], vec![1.0]).expect("static box"),
    )
}

pub fn vehicle_domains() -> (AxisBox, AxisBox) {
    let safe = AxisBox::new(vec![0.0, -0.15], vec![1.0, 0.55]).expect("static box");
    (safe.clone(), safe)
}

/// Random point in a box; shared helper for simulations and tests.
pub fn uniform_in<R: Rng + ?Sized>(rng: &mut R, b: &AxisBox) -> Vec<f64> {
    b.lower()
        .iter()
        .zip(b.upper())
        .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
        .collect()
}
