//! Two-consecutive sample collection and the coverage radius of a dataset.
//!
//! The coverage radius is the largest distance from any point of `X × W` to
//! the nearest sample sharing the same input. It is evaluated on a closed
//! lattice over `X × W`; the reported value adds the half-diagonal of one
//! lattice cell, which bounds the gap between the lattice maximum and the
//! true supremum.

mod kdtree;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blackbox::SubsystemOracle;
use crate::error::{Error, Result};
use crate::gridding::AxisBox;
use kdtree::{squared_distance, KdTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub x: Vec<f64>,
    pub u_index: usize,
    pub w: Vec<f64>,
    pub x_next: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    UniformRandom,
    LowDiscrepancy,
    /// Cell-centred lattice with the same count on every axis of `X × W`.
    Grid,
}

/// Sidecar metadata of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub subsystem_id: usize,
    pub seed: u64,
    pub strategy: SamplingStrategy,
    pub x_box: AxisBox,
    pub w_box: AxisBox,
    pub n_inputs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub pairs: Vec<SamplePair>,
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// `n` points of the unit cube `[0,1]^dim`.
fn unit_design(
    strategy: SamplingStrategy,
    dim: usize,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<f64>>> {
    match strategy {
        SamplingStrategy::Grid => {
            let k = (n as f64).powf(1.0 / dim as f64).round() as usize;
            if k == 0 || k.checked_pow(dim as u32) != Some(n) {
                return Err(Error::Config(format!(
                    "grid sampling needs n_per_input to be a perfect {dim}-th power, got {n}"
                )));
            }
            Ok((0..n)
                .map(|mut i| {
                    let mut p = vec![0.0; dim];
                    for a in (0..dim).rev() {
                        p[a] = ((i % k) as f64 + 0.5) / k as f64;
                        i /= k;
                    }
                    p
                })
                .collect())
        }
        SamplingStrategy::LowDiscrepancy => {
            if dim > PRIMES.len() {
                return Err(Error::Config(format!("low-discrepancy sampling supports up to {} axes", PRIMES.len())));
            }
            // one Cranley-Patterson shift per seed, shared by every input
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            Ok((1..=n as u64)
                .map(|i| {
                    (0..dim)
                        .map(|a| {
                            let v = radical_inverse(i, PRIMES[a]) + shift[a];
                            v - v.floor()
                        })
                        .collect()
                })
                .collect())
        }
        SamplingStrategy::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            Ok((0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect())
        }
    }
}

fn map_to_box(unit: &[f64], b: &AxisBox) -> Vec<f64> {
    unit.iter()
        .zip(b.lower().iter().zip(b.upper()))
        .map(|(t, (lo, hi))| lo + t * (hi - lo))
        .collect()
}

/// Queries the oracle `n_per_input` times per input on `X × W`.
pub fn collect(
    oracle: &SubsystemOracle,
    x_box: &AxisBox,
    w_box: &AxisBox,
    n_per_input: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Dataset> {
    if n_per_input == 0 {
        return Err(Error::Config("n_per_input must be >= 1".into()));
    }
    let (n, p) = (oracle.state_dim(), oracle.dist_dim());
    if x_box.dim() != n || w_box.dim() != p {
        return Err(Error::InputShape(format!(
            "boxes of dimension ({}, {}) for a subsystem with ({n}, {p})",
            x_box.dim(),
            w_box.dim()
        )));
    }
    let per_input: Vec<Vec<SamplePair>> = (0..oracle.inputs().len())
        .into_par_iter()
        .map(|u| {
            let design = unit_design(strategy, n + p, n_per_input, seed, u as u64)?;
            design
                .into_iter()
                .map(|t| {
                    let x = map_to_box(&t[..n], x_box);
                    let w = map_to_box(&t[n..], w_box);
                    let mut x_next = vec![0.0; n];
                    oracle.step_into(&x, u, &w, &mut x_next);
                    if x_next.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Sampling {
                            u: oracle.inputs()[u].clone(),
                            x,
                            w,
                            reason: "oracle returned a non-finite state".into(),
                        });
                    }
                    Ok(SamplePair { x, u_index: u, w, x_next })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            subsystem_id: 0,
            seed,
            strategy,
            x_box: x_box.clone(),
            w_box: w_box.clone(),
            n_inputs: oracle.inputs().len(),
        },
        pairs: per_input.into_iter().flatten().collect(),
    })
}

impl Dataset {
    pub fn state_dim(&self) -> usize {
        self.meta.x_box.dim()
    }

    pub fn dist_dim(&self) -> usize {
        self.meta.w_box.dim()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sample indices grouped by input index.
    pub fn by_input(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.meta.n_inputs];
        for (z, pair) in self.pairs.iter().enumerate() {
            if pair.u_index < groups.len() {
                groups[pair.u_index].push(z);
            }
        }
        groups
    }

    pub fn check_coverage(&self) -> Result<()> {
        if let Some(u) = self.by_input().iter().position(|g| g.is_empty()) {
            return Err(Error::IncompleteDataset(u));
        }
        if let Some(p) = self.pairs.iter().find(|p| p.u_index >= self.meta.n_inputs) {
            return Err(Error::Index(format!("sample input index {}", p.u_index)));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let (n, p) = (self.state_dim(), self.dist_dim());
        let mut cols: Vec<String> = (0..n).map(|k| format!("x_{k}")).collect();
        cols.push("u_index".into());
        cols.extend((0..p).map(|k| format!("w_{k}")));
        cols.extend((0..n).map(|k| format!("xnext_{k}")));
        let mut out = cols.join(",");
        out.push('\n');
        for pair in &self.pairs {
            let mut fields: Vec<String> = pair.x.iter().map(|v| v.to_string()).collect();
            fields.push(pair.u_index.to_string());
            fields.extend(pair.w.iter().map(|v| v.to_string()));
            fields.extend(pair.x_next.iter().map(|v| v.to_string()));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn from_csv(meta: DatasetMeta, text: &str, origin: &Path) -> Result<Self> {
        let (n, p) = (meta.x_box.dim(), meta.w_box.dim());
        let bad = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        if header.split(',').count() != 2 * n + p + 1 {
            return Err(bad(format!("header has wrong column count: {header}")));
        }
        let mut pairs = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * n + p + 1 {
                return Err(bad(format!("row {row} has {} fields", fields.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {row}: {e}")))
            };
            let x = fields[..n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let u_index = fields[n]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("row {row}: {e}")))?;
            let w = fields[n + 1..n + 1 + p].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let x_next = fields[n + 1 + p..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            pairs.push(SamplePair { x, u_index, w, x_next });
        }
        Ok(Dataset { meta, pairs })
    }

    /// SHA-256 over the CSV rendering and the metadata.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.update(serde_json::to_vec(&self.meta).unwrap_or_default());
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Conservative coverage radius: `grid_sigma + slack`.
    pub sigma: f64,
    /// Max-min distance over the evaluation lattice.
    pub grid_sigma: f64,
    /// Half-diagonal of one evaluation cell.
    pub slack: f64,
    pub eval_points_per_axis: Vec<usize>,
    pub argmax_x: Vec<f64>,
    pub argmax_w: Vec<f64>,
    pub argmax_input: usize,
}

/// Closed evaluation lattice over `X × W`; a single point sits at the center.
pub(crate) struct Lattice {
    lower: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
}

impl Lattice {
    pub(crate) fn new(domain: &AxisBox, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() || counts.contains(&0) {
            return Err(Error::Config(format!(
                "evaluation lattice needs {} positive counts, got {counts:?}",
                domain.dim()
            )));
        }
        let (mut lower, mut step) = (Vec::new(), Vec::new());
        for (k, &c) in counts.iter().enumerate() {
            let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
            if c == 1 {
                lower.push(0.5 * (lo + hi));
                step.push(hi - lo);
            } else {
                lower.push(lo);
                step.push((hi - lo) / (c - 1) as f64);
            }
        }
        Ok(Self {
            lower,
            step,
            counts: counts.to_vec(),
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub(crate) fn point(&self, mut i: usize, out: &mut [f64]) {
        for k in (0..self.counts.len()).rev() {
            let c = i % self.counts[k];
            i /= self.counts[k];
            out[k] = if self.counts[k] == 1 {
                self.lower[k]
            } else {
                self.lower[k] + c as f64 * self.step[k]
            };
        }
    }

    pub(crate) fn half_diagonal(&self) -> f64 {
        0.5 * self.step.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Coverage radius of `dataset` over `X × W`, matched per input.
pub fn compute_sigma(
    dataset: &Dataset,
    x_box: &AxisBox,
    w_box: &AxisBox,
    eval_points_per_axis: &[usize],
) -> Result<CoverageReport> {
    dataset.check_coverage()?;
    let n = x_box.dim();
    if n != dataset.state_dim() || w_box.dim() != dataset.dist_dim() {
        return Err(Error::InputShape("boxes do not match the dataset".into()));
    }
    let domain = x_box.product(w_box);
    let dim = domain.dim();
    let lattice = Lattice::new(&domain, eval_points_per_axis)?;

    // Inputs whose sample positions coincide share one evaluation.
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    let by_input = dataset.by_input();
    for (u, idx) in by_input.iter().enumerate() {
        let mut key: Vec<u64> = Vec::with_capacity(idx.len() * dim);
        for &z in idx {
            let pair = &dataset.pairs[z];
            key.extend(pair.x.iter().chain(&pair.w).map(|v| v.to_bits()));
        }
        groups.entry(key).or_default().push(u);
    }
    let mut reps: Vec<usize> = groups.values().map(|us| us[0]).collect();
    reps.sort_unstable();

    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for u in reps {
        let flat: Vec<f64> = by_input[u]
            .iter()
            .flat_map(|&z| {
                let pair = &dataset.pairs[z];
                pair.x.iter().chain(&pair.w).copied().collect::<Vec<_>>()
            })
            .collect();
        let tree = KdTree::build(dim, flat);
        let (d2, at) = (0..lattice.len())
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || vec![0.0; dim],
                |buf, i| {
                    lattice.point(i, buf);
                    (tree.nearest_squared(buf), i)
                },
            )
            .reduce(|| (f64::NEG_INFINITY, usize::MAX), max_with_first_index);
        if d2 > best.0 || (d2 == best.0 && u < best.2) {
            best = (d2, at, u);
        }
    }
    let grid_sigma = best.0.max(0.0).sqrt();
    let mut point = vec![0.0; dim];
    lattice.point(best.1, &mut point);
    let slack = lattice.half_diagonal();
    Ok(CoverageReport {
        sigma: grid_sigma + slack,
        grid_sigma,
        slack,
        eval_points_per_axis: eval_points_per_axis.to_vec(),
        argmax_x: point[..n].to_vec(),
        argmax_w: point[n..].to_vec(),
        argmax_input: best.2,
    })
}

fn max_with_first_index(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Straight double loop used to cross-check [`compute_sigma`].
pub fn brute_force_sigma(
    dataset: &Dataset,
    x_box: &AxisBox,
    w_box: &AxisBox,
    eval_points_per_axis: &[usize],
) -> Result<f64> {
    let domain = x_box.product(w_box);
    let lattice = Lattice::new(&domain, eval_points_per_axis)?;
    let mut buf = vec![0.0; domain.dim()];
    let mut sigma: f64 = 0.0;
    for u in 0..dataset.meta.n_inputs {
        for i in 0..lattice.len() {
            lattice.point(i, &mut buf);
            let mut nearest = f64::INFINITY;
            for pair in dataset.pairs.iter().filter(|p| p.u_index == u) {
                let s: Vec<f64> = pair.x.iter().chain(&pair.w).copied().collect();
                nearest = nearest.min(squared_distance(&buf, &s).sqrt());
            }
            sigma = sigma.max(nearest);
        }
    }
    Ok(sigma)
}

/// Default evaluation resolution: four lattice intervals per abstraction cell.
pub fn default_eval_points(state_cells: &[usize], dist_cells: &[usize]) -> Vec<usize> {
    state_cells
        .iter()
        .chain(dist_cells)
        .map(|c| 4 * c + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{room_subsystem, RoomNetworkConfig};
    use proptest::prelude::*;

    fn toy_oracle() -> SubsystemOracle {
        SubsystemOracle::from_fn(1, 1, vec![vec![0.0]], |x, _, _, out| out[0] = x[0]).unwrap()
    }

    fn dataset_at(xs: &[f64], w: f64, x_box: &AxisBox, w_box: &AxisBox) -> Dataset {
        Dataset {
            meta: DatasetMeta {
                subsystem_id: 0,
                seed: 0,
                strategy: SamplingStrategy::Grid,
                x_box: x_box.clone(),
                w_box: w_box.clone(),
                n_inputs: 1,
            },
            pairs: xs
                .iter()
                .map(|&x| SamplePair {
                    x: vec![x],
                    u_index: 0,
                    w: vec![w],
                    x_next: vec![x],
                })
                .collect(),
        }
    }

    fn boxes() -> (AxisBox, AxisBox) {
        (
            AxisBox::new(vec![0.0], vec![1.0]).unwrap(),
            // a vanishing disturbance axis stands in for "no disturbance"
            AxisBox::new(vec![0.0], vec![1e-300]).unwrap(),
        )
    }

    #[test]
    fn counts_and_determinism() {
        let room = room_subsystem(&RoomNetworkConfig::new(1)).unwrap();
        let (xb, wb) = crate::blackbox::room_domains();
        for strategy in [SamplingStrategy::UniformRandom, SamplingStrategy::LowDiscrepancy] {
            let a = collect(&room, &xb, &wb, 100, strategy, 11).unwrap();
            assert_eq!(a.len(), 200);
            let b = collect(&room, &xb, &wb, 100, strategy, 11).unwrap();
            assert_eq!(a, b);
            assert!(a.pairs.iter().all(|p| xb.contains(&p.x) && wb.contains(&p.w)));
        }
        let g = collect(&room, &xb, &wb, 100, SamplingStrategy::Grid, 0).unwrap();
        assert_eq!(g.by_input()[1].len(), 100);
        let mut xs: Vec<f64> = g.pairs.iter().map(|p| p.x[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert_eq!(xs.len(), 10);
        assert!(collect(&room, &xb, &wb, 99, SamplingStrategy::Grid, 0).is_err());
        assert!(collect(&room, &xb, &wb, 0, SamplingStrategy::Grid, 0).is_err());
    }

    #[test]
    fn recorded_successor_matches_oracle() {
        let room = room_subsystem(&RoomNetworkConfig::new(1)).unwrap();
        let (xb, wb) = crate::blackbox::room_domains();
        let d = collect(&room, &xb, &wb, 20, SamplingStrategy::UniformRandom, 5).unwrap();
        for p in &d.pairs {
            assert_eq!(room.step_index(&p.x, p.u_index, &p.w).unwrap(), p.x_next);
        }
    }

    #[test]
    fn non_finite_oracle_output_is_a_sampling_error() {
        let bad = SubsystemOracle::from_fn(1, 1, vec![vec![0.0]], |_, _, _, out| out[0] = f64::NAN).unwrap();
        let (xb, wb) = boxes();
        assert!(matches!(
            collect(&bad, &xb, &wb, 3, SamplingStrategy::UniformRandom, 0),
            Err(Error::Sampling { .. })
        ));
        let _ = toy_oracle();
    }

    #[test]
    fn two_samples_on_unit_interval() {
        let (xb, wb) = boxes();
        let d = dataset_at(&[0.25, 0.75], 0.0, &xb, &wb);
        let r = compute_sigma(&d, &xb, &wb, &[101, 1]).unwrap();
        assert!((r.grid_sigma - 0.25).abs() < 1e-12);
        let brute = brute_force_sigma(&d, &xb, &wb, &[101, 1]).unwrap();
        assert!((brute - 0.25).abs() < 1e-12);
        assert!([0.0, 0.5, 1.0].iter().any(|x| (r.argmax_x[0] - x).abs() < 1e-12));
        assert!(r.sigma >= r.grid_sigma);
    }

    #[test]
    fn samples_on_every_evaluation_point_give_zero() {
        let (xb, wb) = boxes();
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let d = dataset_at(&xs, 0.5e-300, &xb, &wb);
        let r = compute_sigma(&d, &xb, &wb, &[11, 1]).unwrap();
        assert!(r.grid_sigma < 1e-12);
    }

    #[test]
    fn missing_input_is_reported() {
        let (xb, wb) = boxes();
        let mut d = dataset_at(&[0.5], 0.0, &xb, &wb);
        d.meta.n_inputs = 2;
        assert!(matches!(compute_sigma(&d, &xb, &wb, &[5, 1]), Err(Error::IncompleteDataset(1))));
    }

    #[test]
    fn csv_round_trip() {
        let room = room_subsystem(&RoomNetworkConfig::new(1)).unwrap();
        let (xb, wb) = crate::blackbox::room_domains();
        let d = collect(&room, &xb, &wb, 7, SamplingStrategy::UniformRandom, 2).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("x_0,u_index,w_0,xnext_0\n"));
        let back = Dataset::from_csv(d.meta.clone(), &text, Path::new("mem")).unwrap();
        assert_eq!(back, d);
    }

    fn random_dataset(seed: u64, n: usize) -> (Dataset, AxisBox, AxisBox) {
        let xb = AxisBox::new(vec![-0.5], vec![0.5]).unwrap();
        let wb = AxisBox::new(vec![-1.0], vec![1.0]).unwrap();
        let oracle = SubsystemOracle::from_fn(1, 1, vec![vec![0.0], vec![1.0]], |x, _, _, o| o[0] = x[0]).unwrap();
        let d = collect(&oracle, &xb, &wb, n, SamplingStrategy::UniformRandom, seed).unwrap();
        (d, xb, wb)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kd_tree_matches_double_loop(seed in 0u64..1000, n in 1usize..25) {
            let (d, xb, wb) = random_dataset(seed, n);
            let fast = compute_sigma(&d, &xb, &wb, &[21, 21]).unwrap();
            let slow = brute_force_sigma(&d, &xb, &wb, &[21, 21]).unwrap();
            prop_assert_eq!(fast.grid_sigma, slow);
        }

        #[test]
        fn adding_samples_never_increases_sigma(seed in 0u64..1000, n in 1usize..20, x in -0.5f64..0.5, w in -1.0f64..1.0) {
            let (mut d, xb, wb) = random_dataset(seed, n);
            let before = compute_sigma(&d, &xb, &wb, &[17, 17]).unwrap().grid_sigma;
            d.pairs.push(SamplePair { x: vec![x], u_index: (seed % 2) as usize, w: vec![w], x_next: vec![x] });
            let after = compute_sigma(&d, &xb, &wb, &[17, 17]).unwrap().grid_sigma;
            prop_assert!(after <= before);
        }

        #[test]
        fn sigma_scales_with_the_domain(seed in 0u64..1000, n in 1usize..20) {
            let (d, xb, wb) = random_dataset(seed, n);
            let base = compute_sigma(&d, &xb, &wb, &[9, 9]).unwrap();
            let mut scaled = d.clone();
            for p in &mut scaled.pairs {
                p.x[0] *= 2.0;
                p.w[0] *= 2.0;
            }
            let (xb2, wb2) = (xb.scaled(2.0).unwrap(), wb.scaled(2.0).unwrap());
            scaled.meta.x_box = xb2.clone();
            scaled.meta.w_box = wb2.clone();
            let twice = compute_sigma(&scaled, &xb2, &wb2, &[9, 9]).unwrap();
            prop_assert!((twice.grid_sigma - 2.0 * base.grid_sigma).abs() < 1e-12);
            prop_assert!((twice.sigma - 2.0 * base.sigma).abs() < 1e-12);
        }
    }
}
