//! Static kd-tree for exact nearest-neighbour distances.

pub(crate) struct KdTree {
    dim: usize,
    points: Vec<f64>,
    nodes: Vec<Node>,
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl KdTree {
    /// `points` is a flat row-major buffer of `dim`-vectors.
    pub(crate) fn build(dim: usize, points: Vec<f64>) -> Self {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            points,
            nodes: Vec::with_capacity(n),
        };
        let mut idx: Vec<usize> = (0..n).collect();
        tree.build_rec(&mut idx);
        tree
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_rec(&mut self, idx: &mut [usize]) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        // split on the axis of widest spread
        let axis = (0..self.dim)
            .map(|k| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.points[i * self.dim + k];
                    (lo.min(v), hi.max(v))
                });
                (k, hi - lo)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let mid = idx.len() / 2;
        let dim = self.dim;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |a, b| pts[a * dim + axis].total_cmp(&pts[b * dim + axis]));
        let node = self.nodes.len();
        self.nodes.push(Node {
            point: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (left, rest) = idx.split_at_mut(mid);
        let l = self.build_rec(left);
        let r = self.build_rec(&mut rest[1..]);
        self.nodes[node].left = l;
        self.nodes[node].right = r;
        Some(node)
    }

    /// Squared distance from `q` to the nearest stored point.
    pub(crate) fn nearest_squared(&self, q: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: &[f64], best: &mut f64) {
        let n = &self.nodes[node];
        let p = self.point(n.point);
        let d = squared_distance(q, p);
        if d < *best {
            *best = d;
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff <= 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if diff * diff < *best {
            if let Some(c) = far {
                self.search(c, q, best);
            }
        }
    }
}
