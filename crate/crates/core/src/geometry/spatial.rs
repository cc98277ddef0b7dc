//! A static k-d tree over a point cloud of arbitrary ambient dimension.
//!
//! Built once, queried many times: nearest neighbor and fixed-radius range
//! queries. The brute-force counterparts live alongside so tests (and very
//! small inputs) can use them as an oracle.

use super::PointCloud;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Spatial index over the points of a [`PointCloud`].
///
/// The tree keeps its own copy of the coordinates (permuted for locality), so
/// it does not borrow the cloud it was built from.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    indices: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let dim = cloud.ambient_dim();
        let mut indices: Vec<usize> = (0..cloud.len()).collect();
        let mut nodes = Vec::new();
        if !indices.is_empty() {
            let len = indices.len();
            build_node(cloud, &mut indices, 0, len, &mut nodes);
        }
        let mut coords = Vec::with_capacity(cloud.len() * dim);
        for &i in &indices {
            coords.extend_from_slice(cloud.point(i));
        }
        Self {
            dim,
            coords,
            indices,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn coord(&self, slot: usize) -> &[f64] {
        &self.coords[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Index (into the original cloud) and distance of the nearest point.
    /// Ties resolve to the smaller original index.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, query, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn nearest_in(&self, node: usize, query: &[f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = squared_distance(self.coord(slot), query);
                    let idx = self.indices[slot];
                    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                        *best = (idx, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_in(near, query, best);
                if diff * diff <= best.1 {
                    self.nearest_in(far, query, best);
                }
            }
        }
    }

    /// Original indices of every point with `‖p − query‖ ≤ radius`, ascending.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() && radius >= 0.0 {
            self.range_in(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn range_in(&self, node: usize, query: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    if squared_distance(self.coord(slot), query) <= r2 {
                        out.push(self.indices[slot]);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.range_in(left, query, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.range_in(right, query, r2, out);
                }
            }
        }
    }
}

fn build_node(
    cloud: &PointCloud,
    indices: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let dim = cloud.ambient_dim();
    let slice = &mut indices[start..end];
    let mut axis = 0;
    let mut widest = -1.0;
    for a in 0..dim {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &i| {
            let v = cloud.point(i)[a];
            (acc.0.min(v), acc.1.max(v))
        });
        if hi - lo > widest {
            widest = hi - lo;
            axis = a;
        }
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        cloud.point(a)[axis].total_cmp(&cloud.point(b)[axis])
    });
    let value = cloud.point(slice[mid])[axis];
    nodes.push(Node::Leaf { start, end });
    let left = build_node(cloud, indices, start, start + mid, nodes);
    let right = build_node(cloud, indices, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Brute-force nearest neighbor, same tie rule as [`KdTree::nearest`].
pub fn nearest_brute_force(cloud: &PointCloud, query: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in cloud.iter().enumerate() {
        let d2 = squared_distance(p, query);
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

pub fn within_radius_brute_force(cloud: &PointCloud, query: &[f64], radius: f64) -> Vec<usize> {
    cloud
        .iter()
        .enumerate()
        .filter(|(_, p)| squared_distance(p, query) <= radius * radius)
        .map(|(i, _)| i)
        .collect()
}
