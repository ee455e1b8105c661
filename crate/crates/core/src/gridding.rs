//! Axis-aligned boxes, uniform partitions and the quantizer.
//!
//! Cells are half-open towards the lower face: a point lying on the face
//! shared by two cells belongs to the cell with the smaller row-major index.
//! The first cell of every axis also owns the box's lower face, so the closed
//! box is partitioned exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "box bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "degenerate box on axis {k}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Shrinks every face inwards by `margin`. Returns `None` when some axis
    /// collapses (`2 * margin >= width`).
    pub fn deflate(&self, margin: f64) -> Option<AxisBox> {
        let lower: Vec<f64> = self.lower.iter().map(|v| v + margin).collect();
        let upper: Vec<f64> = self.upper.iter().map(|v| v - margin).collect();
        if lower.iter().zip(&upper).all(|(lo, hi)| lo < hi) {
            Some(AxisBox { lower, upper })
        } else {
            None
        }
    }

    /// Concatenation `self × other`.
    pub fn product(&self, other: &AxisBox) -> AxisBox {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        AxisBox { lower, upper }
    }

    /// Isotropic scaling about the origin.
    pub fn scaled(&self, factor: f64) -> Result<AxisBox> {
        let (a, b): (Vec<f64>, Vec<f64>) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let (p, q) = (lo * factor, hi * factor);
                (p.min(q), p.max(q))
            })
            .unzip();
        AxisBox::new(a, b)
    }
}

/// Result of quantizing a point.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantized {
    Cell { index: usize, representative: Vec<f64> },
    OutOfDomain,
}

impl Quantized {
    pub fn index(&self) -> Option<usize> {
        match self {
            Quantized::Cell { index, .. } => Some(*index),
            Quantized::OutOfDomain => None,
        }
    }
}

/// Uniform partition of a box with cell-center representatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct UniformGrid {
    domain: AxisBox,
    cells: Vec<usize>,
    widths: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    delta: f64,
}

/// Serialized form of a grid: the box and the cell counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl TryFrom<GridSpec> for UniformGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        build_grid(AxisBox::new(spec.lower, spec.upper)?, &spec.cells)
    }
}

impl From<UniformGrid> for GridSpec {
    fn from(grid: UniformGrid) -> Self {
        GridSpec {
            lower: grid.domain.lower,
            upper: grid.domain.upper,
            cells: grid.cells,
        }
    }
}

/// Partitions `domain` into `cells_per_axis` equal cells per axis.
pub fn build_grid(domain: AxisBox, cells_per_axis: &[usize]) -> Result<UniformGrid> {
    if cells_per_axis.len() != domain.dim() {
        return Err(Error::Config(format!(
            "grid needs {} cell counts, got {}",
            domain.dim(),
            cells_per_axis.len()
        )));
    }
    if cells_per_axis.contains(&0) {
        return Err(Error::Config("cells per axis must be >= 1".into()));
    }
    let widths: Vec<f64> = domain
        .widths()
        .iter()
        .zip(cells_per_axis)
        .map(|(w, n)| w / *n as f64)
        .collect();
    let mut strides = vec![1usize; cells_per_axis.len()];
    for k in (0..cells_per_axis.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * cells_per_axis[k + 1];
    }
    let len = cells_per_axis
        .iter()
        .try_fold(1usize, |acc, n| acc.checked_mul(*n))
        .ok_or_else(|| Error::Config("grid too large".into()))?;
    let delta = widths.iter().map(|w| w * w).sum::<f64>().sqrt();
    Ok(UniformGrid {
        domain,
        cells: cells_per_axis.to_vec(),
        widths,
        strides,
        len,
        delta,
    })
}

impl UniformGrid {
    pub fn domain(&self) -> &AxisBox {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_widths(&self) -> &[f64] {
        &self.widths
    }

    /// Number of cells (and representatives).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Full cell diagonal: the state discretization parameter.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn spec(&self) -> GridSpec {
        self.clone().into()
    }

    /// Row-major multi-index of a flat cell index (last axis fastest).
    pub fn unravel(&self, index: usize) -> Vec<usize> {
        let mut rem = index;
        self.strides
            .iter()
            .map(|s| {
                let k = rem / s;
                rem %= s;
                k
            })
            .collect()
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn representative(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.representative_into(index, &mut out);
        out
    }

    pub fn representative_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for k in 0..self.dim() {
            let c = rem / self.strides[k];
            rem %= self.strides[k];
            out[k] = self.domain.lower[k] + (c as f64 + 0.5) * self.widths[k];
        }
    }

    /// All representatives in row-major order.
    pub fn representatives(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(move |i| self.representative(i))
    }

    /// Cell index of `x`, or `None` outside the box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for k in 0..self.dim() {
            let (lo, hi) = (self.domain.lower[k], self.domain.upper[k]);
            let v = x[k];
            if !(v >= lo && v <= hi) {
                return None;
            }
            let t = (v - lo) / self.widths[k];
            let nearest = t.round();
            // faces within rounding noise count as exact boundaries
            let c = if (t - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
                nearest as i64 - 1
            } else {
                t.ceil() as i64 - 1
            };
            let c = c.clamp(0, self.cells[k] as i64 - 1) as usize;
            index += c * self.strides[k];
        }
        Some(index)
    }

    /// The quantization map: cell index and center of the cell holding `x`.
    pub fn quantize(&self, x: &[f64]) -> Quantized {
        match self.cell_of(x) {
            Some(index) => Quantized::Cell {
                index,
                representative: self.representative(index),
            },
            None => Quantized::OutOfDomain,
        }
    }

    /// Nearest representative even for points outside the box.
    pub fn nearest_cell(&self, x: &[f64]) -> usize {
        let mut index = 0;
        for k in 0..self.dim() {
            let t = (x[k] - self.domain.lower[k]) / self.widths[k] - 0.5;
            let c = t.round().clamp(0.0, self.cells[k] as f64 - 1.0) as usize;
            index += c * self.strides[k];
        }
        index
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid() -> UniformGrid {
        build_grid(AxisBox::new(vec![-0.5], vec![0.5]).unwrap(), &[10]).unwrap()
    }

    #[test]
    fn one_dimensional_representatives_and_delta() {
        let g = unit_grid();
        let reps: Vec<f64> = g.representatives().map(|r| r[0]).collect();
        let expected = [-0.45, -0.35, -0.25, -0.15, -0.05, 0.05, 0.15, 0.25, 0.35, 0.45];
        for (r, e) in reps.iter().zip(expected) {
            assert!((r - e).abs() < 1e-12);
        }
        assert!((g.delta() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn vehicle_box_delta_matches_brute_force_cell_diameter() {
        let b = AxisBox::new(vec![0.0, -0.15], vec![1.0, 0.55]).unwrap();
        let g = build_grid(b, &[10, 7]).unwrap();
        assert_eq!(g.len(), 70);
        assert!((g.delta() - 0.02f64.sqrt()).abs() < 1e-12);

        // max pairwise distance over a fine lattice of cell 0 incl. its faces
        let w = g.cell_widths().to_vec();
        let n = 20;
        let pts: Vec<(f64, f64)> = (0..=n)
            .flat_map(|i| (0..=n).map(move |j| (i as f64 / n as f64, j as f64 / n as f64)))
            .map(|(a, b)| (a * w[0], b * w[1]))
            .collect();
        let mut best: f64 = 0.0;
        for p in &pts {
            for q in &pts {
                best = best.max(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt());
            }
        }
        assert!((best - g.delta()).abs() < 1e-12);
    }

    #[test]
    fn single_cell_is_center() {
        let b = AxisBox::new(vec![0.0, -1.0], vec![2.0, 3.0]).unwrap();
        let g = build_grid(b, &[1, 1]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.representative(0), vec![1.0, 1.0]);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        assert!(AxisBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(AxisBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(build_grid(AxisBox::new(vec![0.0], vec![1.0]).unwrap(), &[0]).is_err());
    }

    #[test]
    fn quantize_matches_brute_force_nearest_center() {
        let g = unit_grid();
        match g.quantize(&[0.26]) {
            Quantized::Cell { representative, .. } => {
                let nearest = g
                    .representatives()
                    .map(|r| r[0])
                    .min_by(|a, b| (a - 0.26).abs().total_cmp(&(b - 0.26).abs()))
                    .unwrap();
                assert!((representative[0] - nearest).abs() < 1e-15);
                assert!((representative[0] - 0.25).abs() < 1e-12);
            }
            Quantized::OutOfDomain => panic!("inside the box"),
        }
    }

    #[test]
    fn boundary_goes_to_lower_cell() {
        let g = unit_grid();
        let q = g.quantize(&[0.2]);
        let Quantized::Cell { index, representative } = q else { panic!() };
        assert_eq!(index, 6);
        assert!((representative[0] - 0.15).abs() < 1e-12);
        // box faces belong to the outermost cells
        assert_eq!(g.cell_of(&[-0.5]), Some(0));
        assert_eq!(g.cell_of(&[0.5]), Some(9));
    }

    #[test]
    fn outside_box_is_signalled() {
        let g = unit_grid();
        assert_eq!(g.quantize(&[0.5000001]), Quantized::OutOfDomain);
        assert_eq!(g.quantize(&[-3.0]), Quantized::OutOfDomain);
        assert_eq!(g.quantize(&[f64::NAN]), Quantized::OutOfDomain);
        assert_eq!(g.nearest_cell(&[7.0]), 9);
    }

    #[test]
    fn ravel_unravel_round_trip() {
        let b = AxisBox::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
        let g = build_grid(b, &[3, 4, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(i)), i);
        }
        assert_eq!(g.unravel(1), vec![0, 0, 1]);
    }

    #[test]
    fn deflate_collapses() {
        let b = AxisBox::new(vec![-0.5], vec![0.5]).unwrap();
        assert!(b.deflate(0.5).is_none());
        assert_eq!(b.deflate(0.1).unwrap().lower(), &[-0.4]);
    }

    proptest! {
        #[test]
        fn quantization_error_within_half_diagonal(x in -0.5f64..=0.5, y in -0.15f64..=0.55) {
            let b = AxisBox::new(vec![-0.5, -0.15], vec![0.5, 0.55]).unwrap();
            let g = build_grid(b, &[13, 7]).unwrap();
            let Quantized::Cell { index, representative } = g.quantize(&[x, y]) else {
                panic!("inside");
            };
            let err = ((representative[0] - x).powi(2) + (representative[1] - y).powi(2)).sqrt();
            prop_assert!(err <= g.delta() / 2.0 + 1e-12);
            // idempotent on representatives
            prop_assert_eq!(g.cell_of(&representative), Some(index));
        }
    }
}
