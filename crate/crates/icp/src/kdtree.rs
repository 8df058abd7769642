//! Exact nearest-neighbor search over 3D points.

use sixd_core::Vec3;

use crate::error::IcpError;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree. Queries are exact and break distance ties towards the
/// lowest point index, so results match a linear scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &Vec3<f64>, b: &Vec3<f64>) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn better(d: f64, i: usize, best_d: f64, best_i: usize) -> bool {
    d < best_d || (d == best_d && i < best_i)
}

impl KdTree {
    pub fn build(points: &[Vec3<f64>]) -> Result<Self, IcpError> {
        if points.is_empty() {
            return Err(IcpError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(IcpError::NonFinite(i));
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        if hi[axis] == lo[axis] {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let points = &self.points;
        self.order[start..end].sort_by(|&i, &j| points[i][axis].total_cmp(&points[j][axis]).then(i.cmp(&j)));
        let mid = start + (end - start) / 2;
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3<f64>] {
        &self.points
    }

    /// Index of and Euclidean distance to the nearest point.
    pub fn nearest(&self, query: Vec3<f64>) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(0, &query, &mut best);
        (best.1, best.0.sqrt())
    }

    fn nearest_in(&self, node: usize, q: &Vec3<f64>, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if better(d, i, best.0, best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.0 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points as `(index, distance)`, closest first, ties by
    /// index.
    pub fn k_nearest(&self, query: Vec3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.k_nearest_in(0, &query, k, &mut heap);
        }
        heap.into_iter().map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn k_nearest_in(&self, node: usize, q: &Vec3<f64>, k: usize, found: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if found.len() == k {
                        let (wd, wi) = found[k - 1];
                        if !better(d, i, wd, wi) {
                            continue;
                        }
                        found.pop();
                    }
                    let pos = found.partition_point(|&(fd, fi)| better(fd, fi, d, i));
                    found.insert(pos, (d, i));
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.k_nearest_in(near, q, k, found);
                if found.len() < k || diff * diff <= found[k - 1].0 {
                    self.k_nearest_in(far, q, k, found);
                }
            }
        }
    }
}
