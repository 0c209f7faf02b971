//! Exact nearest-neighbour queries in R³.
//!
//! Ties are resolved towards the lowest point index so results do not depend
//! on the search structure.

use crate::geom::{dist2, Vec3};

/// Point sets at or above this size get a kd-tree.
pub const KD_TREE_THRESHOLD: usize = 4096;

#[derive(Debug, Clone)]
pub enum NearestNeighbors {
    Brute(Vec<Vec3>),
    Tree(KdTree),
}

impl NearestNeighbors {
    pub fn new(points: Vec<Vec3>) -> Self {
        if points.len() >= KD_TREE_THRESHOLD {
            NearestNeighbors::Tree(KdTree::new(points))
        } else {
            NearestNeighbors::Brute(points)
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NearestNeighbors::Brute(p) => p.len(),
            NearestNeighbors::Tree(t) => t.points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(index, squared distance)` of the nearest point. Panics on an empty set.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        match self {
            NearestNeighbors::Brute(p) => brute_nearest(p, q),
            NearestNeighbors::Tree(t) => t.nearest(q),
        }
    }
}

pub fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
    assert!(!points.is_empty(), "nearest neighbour of an empty set");
    let mut best = (0, dist2(points[0], q));
    for (i, &p) in points.iter().enumerate().skip(1) {
        let d = dist2(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(&points, &mut idx, 0, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let root = self.root.expect("nearest neighbour of an empty set");
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: Vec3, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        let p = self.points[n.point];
        let d = dist2(p, q);
        if d < best.1 || (d == best.1 && n.point < best.0) {
            *best = (n.point, d);
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        // equal distance may still hold a lower index on the far side
        if diff * diff <= best.1 {
            if let Some(c) = far {
                self.search(c, q, best);
            }
        }
    }
}

fn build(points: &[Vec3], idx: &mut [usize], depth: usize, nodes: &mut Vec<KdNode>) -> Option<usize> {
    if idx.is_empty() {
        return None;
    }
    let axis = depth % 3;
    idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = idx.len() / 2;
    let point = idx[mid];
    let slot = nodes.len();
    nodes.push(KdNode { point, axis, left: None, right: None });
    let (lo, hi) = idx.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut hi[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    Some(slot)
}
