//! Symbolic models built from oracle queries at grid representatives.

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::blackbox::SubsystemOracle;
use crate::error::{Error, Result};
use crate::gridding::{build_grid, AxisBox, UniformGrid};

/// Absorbing symbol for images that leave the state box.
pub const SINK: u32 = u32::MAX;

const MAGIC: &[u8; 4] = b"ABS1";

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicModel {
    state_grid: UniformGrid,
    dist_grid: UniformGrid,
    inputs: Vec<Vec<f64>>,
    table: Vec<u32>,
}

/// One oracle call per `(x̂, u, ŵ)`, images quantized onto `state_grid`.
pub fn build_symbolic(
    oracle: &SubsystemOracle,
    state_grid: &UniformGrid,
    dist_grid: &UniformGrid,
) -> Result<SymbolicModel> {
    let (n, p) = (oracle.state_dim(), oracle.dist_dim());
    if state_grid.dim() != n || dist_grid.dim() != p {
        return Err(Error::InputShape(format!(
            "grids of dimension ({}, {}) for a subsystem with ({n}, {p})",
            state_grid.dim(),
            dist_grid.dim()
        )));
    }
    if state_grid.len() >= SINK as usize {
        return Err(Error::Config("state grid too large for 32-bit indices".into()));
    }
    let (n_u, n_w) = (oracle.inputs().len(), dist_grid.len());
    let rows: Vec<Vec<u32>> = (0..state_grid.len())
        .into_par_iter()
        .map(|s| {
            let x = state_grid.representative(s);
            let mut w = vec![0.0; p];
            let mut next = vec![0.0; n];
            let mut row = Vec::with_capacity(n_u * n_w);
            for u in 0..n_u {
                for j in 0..n_w {
                    dist_grid.representative_into(j, &mut w);
                    oracle.step_into(&x, u, &w, &mut next);
                    if next.iter().any(|v| v.is_nan()) {
                        return Err(Error::Abstraction {
                            state: s,
                            input: u,
                            dist: j,
                            reason: "oracle returned NaN".into(),
                        });
                    }
                    row.push(state_grid.cell_of(&next).map_or(SINK, |c| c as u32));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(SymbolicModel {
        state_grid: state_grid.clone(),
        dist_grid: dist_grid.clone(),
        inputs: oracle.inputs().to_vec(),
        table: rows.concat(),
    })
}

impl SymbolicModel {
    /// Assembles a model from an explicit table, mainly for tests and file loading.
    pub fn from_table(
        state_grid: UniformGrid,
        dist_grid: UniformGrid,
        inputs: Vec<Vec<f64>>,
        table: Vec<u32>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config("empty input set".into()));
        }
        let expected = state_grid.len() * inputs.len() * dist_grid.len();
        if table.len() != expected {
            return Err(Error::Index(format!("table has {} entries, expected {expected}", table.len())));
        }
        if let Some(bad) = table.iter().find(|&&t| t != SINK && t as usize >= state_grid.len()) {
            return Err(Error::Index(format!("successor {bad} is not a state index")));
        }
        Ok(Self {
            state_grid,
            dist_grid,
            inputs,
            table,
        })
    }

    pub fn state_grid(&self) -> &UniformGrid {
        &self.state_grid
    }

    pub fn dist_grid(&self) -> &UniformGrid {
        &self.dist_grid
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

    pub fn n_dists(&self) -> usize {
        self.dist_grid.len()
    }

    pub fn table(&self) -> &[u32] {
        &self.table
    }

    #[inline]
    pub fn offset(&self, s: usize, u: usize, w: usize) -> usize {
        (s * self.inputs.len() + u) * self.dist_grid.len() + w
    }

    /// Successors of `(s, u)` over every disturbance representative.
    #[inline]
    pub fn successors(&self, s: usize, u: usize) -> &[u32] {
        let start = self.offset(s, u, 0);
        &self.table[start..start + self.dist_grid.len()]
    }

    /// `f̂(s, u, w)`; the sink is absorbing.
    pub fn abstract_step(&self, s: u32, u: usize, w: usize) -> Result<u32> {
        if u >= self.n_inputs() || w >= self.n_dists() {
            return Err(Error::Index(format!("input {u} or disturbance {w} out of range")));
        }
        if s == SINK {
            return Ok(SINK);
        }
        if s as usize >= self.n_states() {
            return Err(Error::Index(format!("state {s} out of range")));
        }
        Ok(self.table[self.offset(s as usize, u, w)])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.table.len());
        out.extend_from_slice(MAGIC);
        let n = self.state_grid.dim();
        let p = self.dist_grid.dim();
        let m = self.inputs[0].len();
        for v in [n, p, m, self.inputs.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for grid in [&self.state_grid, &self.dist_grid] {
            write_grid(&mut out, grid);
        }
        for u in &self.inputs {
            for v in u {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for t in &self.table {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        r.magic(MAGIC)?;
        let n = r.u32()? as usize;
        let p = r.u32()? as usize;
        let m = r.u32()? as usize;
        let n_inputs = r.u32()? as usize;
        let state_grid = r.grid(n)?;
        let dist_grid = r.grid(p)?;
        let inputs = (0..n_inputs)
            .map(|_| (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let count = state_grid.len() * n_inputs * dist_grid.len();
        let table = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        SymbolicModel::from_table(state_grid, dist_grid, inputs, table).map_err(|e| r.error(e.to_string()))
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        crate::sampling::hex_digest(h)
    }
}

pub(crate) fn write_grid(out: &mut Vec<u8>, grid: &UniformGrid) {
    let b = grid.domain();
    for k in 0..grid.dim() {
        out.extend_from_slice(&b.lower()[k].to_le_bytes());
        out.extend_from_slice(&b.upper()[k].to_le_bytes());
        out.extend_from_slice(&(grid.cells_per_axis()[k] as u32).to_le_bytes());
    }
}

/// Little-endian cursor over a binary artifact.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], origin: &'a Path) -> Self {
        Self { bytes, pos: 0, origin }
    }

    pub(crate) fn error(&self, reason: String) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            reason,
        }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.error(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.error(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn grid(&mut self, dim: usize) -> Result<UniformGrid> {
        let (mut lo, mut hi, mut cells) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..dim {
            lo.push(self.f64()?);
            hi.push(self.f64()?);
            cells.push(self.u32()? as usize);
        }
        let b = AxisBox::new(lo, hi).map_err(|e| self.error(e.to_string()))?;
        build_grid(b, &cells).map_err(|e| self.error(e.to_string()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{room_subsystem, RoomNetworkConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn room_model() -> (SubsystemOracle, SymbolicModel) {
        let oracle = room_subsystem(&RoomNetworkConfig::new(3)).unwrap();
        let sg = build_grid(AxisBox::new(vec![-0.5], vec![0.5]).unwrap(), &[10]).unwrap();
        let dg = build_grid(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), &[8]).unwrap();
        let sm = build_symbolic(&oracle, &sg, &dg).unwrap();
        (oracle, sm)
    }

    fn brute_nearest(grid: &UniformGrid, x: &[f64]) -> usize {
        (0..grid.len())
            .min_by(|&a, &b| {
                let da: f64 = grid.representative(a).iter().zip(x).map(|(r, v)| (r - v).powi(2)).sum();
                let db: f64 = grid.representative(b).iter().zip(x).map(|(r, v)| (r - v).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap()
    }

    #[test]
    fn identity_dynamics_are_self_loops() {
        let oracle = SubsystemOracle::from_fn(2, 1, vec![vec![0.0], vec![1.0]], |x, _, _, o| o.copy_from_slice(x)).unwrap();
        let sg = build_grid(AxisBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(), &[4, 3]).unwrap();
        let dg = build_grid(AxisBox::new(vec![0.0], vec![1.0]).unwrap(), &[3]).unwrap();
        let sm = build_symbolic(&oracle, &sg, &dg).unwrap();
        assert_eq!(sm.table().len(), 12 * 2 * 3);
        for s in 0..12 {
            for u in 0..2 {
                for w in 0..3 {
                    assert_eq!(sm.abstract_step(s as u32, u, w).unwrap(), s as u32);
                }
            }
        }
    }

    #[test]
    fn room_image_quantizes_to_nearest_center() {
        let (oracle, sm) = room_model();
        // x̂ = 0.45 is cell 9, ŵ closest to 0 on an 8-cell grid is -0.125 or 0.125
        let img = oracle.step_index(&[0.45], 0, &[0.0]).unwrap();
        assert!((img[0] - 0.421).abs() < 1e-12);
        let nearest = brute_nearest(sm.state_grid(), &img);
        assert_eq!(nearest, 9);
        assert!((sm.state_grid().representative(nearest)[0] - 0.45).abs() < 1e-12);
        for j in 0..8 {
            let w = sm.dist_grid().representative(j);
            let img = oracle.step_index(&[0.45], 0, &w).unwrap();
            assert_eq!(sm.abstract_step(9, 0, j).unwrap() as usize, brute_nearest(sm.state_grid(), &img));
        }
    }

    #[test]
    fn escaping_dynamics_give_sink() {
        let oracle = SubsystemOracle::from_fn(1, 1, vec![vec![0.0]], |x, _, _, o| o[0] = x[0] + 10.0).unwrap();
        let sg = build_grid(AxisBox::new(vec![-0.5], vec![0.5]).unwrap(), &[10]).unwrap();
        let dg = build_grid(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), &[2]).unwrap();
        let sm = build_symbolic(&oracle, &sg, &dg).unwrap();
        assert!(sm.table().iter().all(|&t| t == SINK));
        assert_eq!(sm.abstract_step(SINK, 0, 1).unwrap(), SINK);
    }

    #[test]
    fn lookups_check_ranges() {
        let (_, sm) = room_model();
        assert!(sm.abstract_step(10, 0, 0).is_err());
        assert!(sm.abstract_step(0, 2, 0).is_err());
        assert!(sm.abstract_step(0, 0, 8).is_err());
    }

    #[test]
    fn table_agrees_with_recomputation_and_error_bound() {
        let (oracle, sm) = room_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (s, u, w) = (rng.gen_range(0..10), rng.gen_range(0..2), rng.gen_range(0..8));
            let img = oracle
                .step_index(&sm.state_grid().representative(s), u, &sm.dist_grid().representative(w))
                .unwrap();
            let stored = sm.abstract_step(s as u32, u, w).unwrap();
            match sm.state_grid().quantize(&img).index() {
                Some(c) => {
                    assert_eq!(stored as usize, c);
                    let r = sm.state_grid().representative(c);
                    assert!((r[0] - img[0]).abs() <= sm.state_grid().delta());
                }
                None => assert_eq!(stored, SINK),
            }
        }
    }

    #[test]
    fn binary_round_trip_and_determinism() {
        let (oracle, sm) = room_model();
        let again = build_symbolic(&oracle, sm.state_grid(), sm.dist_grid()).unwrap();
        assert_eq!(sm.to_bytes(), again.to_bytes());
        let bytes = sm.to_bytes();
        assert_eq!(&bytes[..4], b"ABS1");
        let back = SymbolicModel::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, sm);
        assert!(SymbolicModel::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SymbolicModel::from_bytes(&bad, Path::new("mem")).is_err());
    }
}
