//! Frame-to-graph conversion via k-nearest neighbours.
//!
//! Each node `i` receives directed edges `j -> i` from its `min(k, N - 1)`
//! Euclidean-nearest neighbours. Neighbour lists are ordered by
//! `(squared distance, index)`, so exact ties always resolve to the smaller
//! particle index, and edges are emitted destination-major in that order.

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::physics::Vec3;

/// Point sets at or below this size skip the kd-tree.
pub const BRUTE_FORCE_MAX: usize = 64;
pub const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphConfig {
    pub k: usize,
    /// Attach `|r_i - r_j|` to every edge.
    pub with_edge_attrs: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 8,
            with_edge_attrs: false,
        }
    }
}

/// Directed KNN graph of one frame with node features and acceleration labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGraph {
    /// `N x d_in`.
    pub node_features: Matrix,
    /// `(source j, destination i)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub edge_attrs: Option<Vec<f64>>,
    /// `N x 3` target accelerations.
    pub labels: Matrix,
    pub k: usize,
}

impl FrameGraph {
    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count()];
        for &(_, dst) in &self.edges {
            deg[dst] += 1;
        }
        deg
    }
}

#[inline]
fn dist2(a: Vec3, b: Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn coord(p: Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

/// Bounded candidate list kept sorted by `(distance^2, index)`.
struct Candidates {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    fn worst(&self) -> f64 {
        self.items.last().map_or(f64::INFINITY, |c| c.0)
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        if self.full() {
            let &(wd, wi) = self.items.last().unwrap();
            if d2 > wd || (d2 == wd && idx > wi) {
                return;
            }
        }
        let at = self
            .items
            .partition_point(|&(d, i)| d < d2 || (d == d2 && i < idx));
        self.items.insert(at, (d2, idx));
        if self.items.len() > self.k {
            self.items.pop();
        }
    }

    fn into_indices(self) -> Vec<usize> {
        self.items.into_iter().map(|(_, i)| i).collect()
    }
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Median-split kd-tree over a borrowed point set.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split along the widest axis of the bounding box.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for (a, (l, h)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let c = coord(self.points[i], a);
                *l = l.min(c);
                *h = h.max(c);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(points[a], axis)
                .total_cmp(&coord(points[b], axis))
                .then(a.cmp(&b))
        });
        let value = coord(points[self.order[mid]], axis);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, skipping index `exclude`.
    pub fn nearest(&self, query: Vec3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut cand = Candidates::new(k);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, exclude, &mut cand);
        }
        cand.into_indices()
    }

    fn search(&self, node: usize, q: Vec3, exclude: Option<usize>, cand: &mut Candidates) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) != exclude {
                        cand.offer(dist2(q, self.points[i]), i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Left points have coord <= value, right points coord >= value.
                let diff = coord(q, axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, cand);
                // Equal distances must still be visited: a tie may carry a smaller index.
                if !cand.full() || diff * diff <= cand.worst() {
                    self.search(far, q, exclude, cand);
                }
            }
        }
    }
}

fn brute_force_neighbors(positions: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    (0..positions.len())
        .map(|i| {
            let mut cand = Candidates::new(k);
            for (j, p) in positions.iter().enumerate() {
                if j != i {
                    cand.offer(dist2(positions[i], *p), j);
                }
            }
            cand.into_indices()
        })
        .collect()
}

/// For every particle, the indices of its `min(k, N - 1)` nearest other particles.
pub fn knn_neighbors(positions: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::arg(format!("KNN needs at least 2 points, got {n}")));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
        return Err(Error::arg(format!("position {i} is not finite")));
    }
    let k = k.min(n - 1);
    if n <= BRUTE_FORCE_MAX {
        return Ok(brute_force_neighbors(positions, k));
    }
    let tree = KdTree::build(positions);
    Ok((0..n)
        .map(|i| tree.nearest(positions[i], k, Some(i)))
        .collect())
}

/// Builds the directed KNN graph of one frame.
pub fn build_graph(
    positions: &[Vec3],
    features: Matrix,
    labels: Matrix,
    config: &GraphConfig,
) -> Result<FrameGraph> {
    let n = positions.len();
    if features.rows() != n {
        return Err(Error::arg(format!(
            "{} feature rows for {n} particles",
            features.rows()
        )));
    }
    if labels.rows() != n || labels.cols() != 3 {
        return Err(Error::arg(format!(
            "labels must be {n}x3, got {}x{}",
            labels.rows(),
            labels.cols()
        )));
    }
    let neighbors = knn_neighbors(positions, config.k)?;
    let mut edges = Vec::with_capacity(n * config.k.min(n - 1));
    let mut attrs = config.with_edge_attrs.then(|| Vec::with_capacity(edges.capacity()));
    for (dst, list) in neighbors.iter().enumerate() {
        for &src in list {
            edges.push((src, dst));
            if let Some(a) = attrs.as_mut() {
                a.push((positions[dst] - positions[src]).norm());
            }
        }
    }
    Ok(FrameGraph {
        node_features: features,
        edges,
        edge_attrs: attrs,
        labels,
        k: config.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn line(xs: &[f64]) -> Vec<Vec3> {
        xs.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn collinear_hand_case() {
        let nb = knn_neighbors(&line(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(nb, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn saturated_k_gives_complete_digraph() {
        let pts = line(&[0.0, 1.0, 3.0, 7.0]);
        for k in [3, 10] {
            let nb = knn_neighbors(&pts, k).unwrap();
            for (i, list) in nb.iter().enumerate() {
                let mut sorted = list.clone();
                sorted.sort();
                let all: Vec<usize> = (0..4).filter(|&j| j != i).collect();
                assert_eq!(sorted, all);
            }
        }
    }

    #[test]
    fn ties_prefer_smaller_index() {
        // 0 sits midway between 1 and 2
        let nb = knn_neighbors(&line(&[0.0, -1.0, 1.0]), 1).unwrap();
        assert_eq!(nb[0], vec![1]);
        let nb = knn_neighbors(&line(&[0.0, 1.0, -1.0]), 1).unwrap();
        assert_eq!(nb[0], vec![1]);
    }

    #[test]
    fn too_few_points() {
        assert!(knn_neighbors(&line(&[0.0]), 1).is_err());
        assert!(knn_neighbors(&line(&[0.0, 1.0]), 0).is_err());
    }

    #[test]
    fn kd_tree_matches_brute_force_with_lattice_ties() {
        // integer lattice: massive distance ties
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..5 {
                for z in 0..4 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let mut rng = SplitMix64::seed_from_u64(1);
        for i in (1..pts.len()).rev() {
            pts.swap(i, rng.random_range(0..=i));
        }
        for k in [1, 4, 6, 8, 26] {
            let tree = KdTree::build(&pts);
            let fast: Vec<Vec<usize>> = (0..pts.len()).map(|i| tree.nearest(pts[i], k, Some(i))).collect();
            assert_eq!(fast, brute_force_neighbors(&pts, k), "k = {k}");
        }
    }

    #[test]
    fn graph_in_degree_and_attrs() {
        let pts = line(&[0.0, 1.0, 3.0]);
        let g = build_graph(&pts, Matrix::zeros(3, 4), Matrix::zeros(3, 3), &GraphConfig { k: 1, with_edge_attrs: false }).unwrap();
        assert_eq!(g.edges, vec![(1, 0), (0, 1), (1, 2)]);
        assert!(g.edge_attrs.is_none());

        let s = 2.0;
        let h = s * 3f64.sqrt() / 2.0;
        let tri = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(s, 0.0, 0.0), Vec3::new(s / 2.0, h, 0.0)];
        let g = build_graph(&tri, Matrix::zeros(3, 4), Matrix::zeros(3, 3), &GraphConfig { k: 2, with_edge_attrs: true }).unwrap();
        assert_eq!(g.in_degrees(), vec![2, 2, 2]);
        for a in g.edge_attrs.unwrap() {
            assert!((a - s).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pts = line(&[0.0, 1.0, 3.0]);
        let cfg = GraphConfig::default();
        assert!(build_graph(&pts, Matrix::zeros(2, 4), Matrix::zeros(3, 3), &cfg).is_err());
        assert!(build_graph(&pts, Matrix::zeros(3, 4), Matrix::zeros(3, 2), &cfg).is_err());
    }
}
