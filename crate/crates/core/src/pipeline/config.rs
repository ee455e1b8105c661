use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blackbox::{room_domains, vehicle_domains, RoomNetworkConfig, VehicleNetworkConfig};
use crate::certificate::{BasisConfig, SopConfig};
use crate::error::{Error, Result};
use crate::gridding::{build_grid, AxisBox};
use crate::lipschitz::LipschitzConfig;
use crate::sampling::{default_eval_points, SamplingStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Room,
    Vehicle,
    /// Caller-supplied oracles; only reachable through [`super::Pipeline::with_system`].
    ExternalOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_per_input: usize,
    pub strategy: SamplingStrategy,
    /// Lattice used for the coverage radius; `None` means four points per cell.
    pub eval_points_per_axis: Option<Vec<usize>>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_per_input: 200,
            strategy: SamplingStrategy::LowDiscrepancy,
            eval_points_per_axis: None,
        }
    }
}

/// Shrink applied to the safe box before synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SafetyMargin {
    /// The certified error bound `ε` of the composed relation.
    Epsilon,
    Fixed(f64),
}

impl Serialize for SafetyMargin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SafetyMargin::Epsilon => s.serialize_str("epsilon"),
            SafetyMargin::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for SafetyMargin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) if n == "epsilon" => Ok(SafetyMargin::Epsilon),
            Raw::Name(n) => Err(serde::de::Error::custom(format!("unknown safety margin {n:?}, expected \"epsilon\" or a number"))),
            Raw::Value(v) => Ok(SafetyMargin::Fixed(v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: usize,
    /// Starts with every subsystem on a face of its safe box.
    pub boundary_starts: usize,
    /// Starts drawn uniformly from the safe boxes.
    pub random_starts: usize,
    /// Subsystems logged to the trajectory files and plots.
    pub record: Vec<usize>,
    /// Concrete/abstract pairs stepped side by side.
    pub coupled_starts: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 500,
            boundary_starts: 50,
            random_starts: 50,
            record: vec![0, 1, 2],
            coupled_starts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    /// Total attempts, the first one included.
    pub max_attempts: usize,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub benchmark: Benchmark,
    #[serde(rename = "M")]
    pub m: usize,
    /// All subsystems share one oracle, so stages up to the certificate run once.
    #[serde(default = "yes")]
    pub homogeneous: bool,
    #[serde(default)]
    pub room: Option<RoomNetworkConfig>,
    #[serde(default)]
    pub vehicle: Option<VehicleNetworkConfig>,
    #[serde(default)]
    pub x_box: Option<AxisBox>,
    #[serde(default)]
    pub w_box: Option<AxisBox>,
    #[serde(default)]
    pub safe_box: Option<AxisBox>,
    pub state_cells: Vec<usize>,
    pub dist_cells: Vec<usize>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub sop: SopConfig,
    #[serde(default)]
    pub lipschitz: LipschitzConfig,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_margin")]
    pub safety_margin: SafetyMargin,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub retry: RetryConfig,
    /// Master seed; sampling, cutting planes and the Lipschitz batches derive from it.
    pub seed: u64,
    /// Where artifacts go; left out of serialized configs so that runs in
    /// different directories produce identical files.
    #[serde(default = "default_out", skip_serializing)]
    pub out_dir: PathBuf,
}

fn yes() -> bool {
    true
}

fn default_eta() -> f64 {
    0.99
}

fn default_margin() -> SafetyMargin {
    SafetyMargin::Epsilon
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Fills every optional section, pins the sub-seeds to the master seed and
    /// validates the result. The output is what `config.resolved.json` holds.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        let (x_box, w_box) = match c.benchmark {
            Benchmark::Room => {
                let mut r = c.room.take().unwrap_or_else(|| RoomNetworkConfig::new(c.m));
                r.rooms = c.m;
                r.validate()?;
                c.room = Some(r);
                room_domains()
            }
            Benchmark::Vehicle => {
                let mut v = c.vehicle.take().unwrap_or_else(|| VehicleNetworkConfig::new(c.m));
                v.vehicles = c.m;
                c.vehicle = Some(v);
                vehicle_domains()
            }
            Benchmark::ExternalOracle => {
                let (Some(x), Some(w)) = (c.x_box.clone(), c.w_box.clone()) else {
                    return Err(Error::Config("external-oracle configs must give x_box and w_box".into()));
                };
                (x, w)
            }
        };
        if c.room.is_some() && c.benchmark != Benchmark::Room || c.vehicle.is_some() && c.benchmark != Benchmark::Vehicle {
            return Err(Error::Config("network section does not match the benchmark".into()));
        }
        let x_box = c.x_box.take().unwrap_or(x_box);
        let w_box = c.w_box.take().unwrap_or(w_box);
        let safe_box = c.safe_box.take().unwrap_or_else(|| x_box.clone());
        if safe_box.dim() != x_box.dim() {
            return Err(Error::Config("safe box and state box differ in dimension".into()));
        }
        build_grid(x_box.clone(), &c.state_cells)?;
        build_grid(w_box.clone(), &c.dist_cells)?;
        if c.sampling.eval_points_per_axis.is_none() {
            c.sampling.eval_points_per_axis = Some(default_eval_points(&c.state_cells, &c.dist_cells));
        }
        if c.sampling.eval_points_per_axis.as_ref().map_or(0, Vec::len) != x_box.dim() + w_box.dim() {
            return Err(Error::Config("eval_points_per_axis needs one entry per axis of X x W".into()));
        }
        if c.sampling.n_per_input == 0 {
            return Err(Error::Config("n_per_input must be >= 1".into()));
        }
        c.basis.build(x_box.dim())?;
        c.sop.seed = c.seed;
        c.sop.validate()?;
        c.lipschitz.seed = c.seed;
        c.lipschitz.validate()?;
        if !(c.eta > 0.0 && c.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0,1), got {}", c.eta)));
        }
        if let SafetyMargin::Fixed(v) = c.safety_margin {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("safety margin must be a finite non-negative number, got {v}")));
            }
        }
        if c.retry.max_attempts == 0 {
            return Err(Error::Config("retry.max_attempts must be >= 1".into()));
        }
        c.simulation.record.retain(|&i| i < self.m);
        c.x_box = Some(x_box);
        c.w_box = Some(w_box);
        c.safe_box = Some(safe_box);
        Ok(c)
    }

    /// Boxes of a resolved config.
    pub fn boxes(&self) -> Result<(&AxisBox, &AxisBox, &AxisBox)> {
        match (&self.x_box, &self.w_box, &self.safe_box) {
            (Some(x), Some(w), Some(s)) => Ok((x, w, s)),
            _ => Err(Error::Config("config is not resolved".into())),
        }
    }

    pub fn eval_points(&self) -> Vec<usize> {
        self.sampling
            .eval_points_per_axis
            .clone()
            .unwrap_or_else(|| default_eval_points(&self.state_cells, &self.dist_cells))
    }
}
