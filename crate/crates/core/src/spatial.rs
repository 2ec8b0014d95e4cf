//! Exact nearest-neighbour search and local point-cloud scales.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::Vec3;

/// Squared Euclidean distance. Every distance in the crate goes through this
/// expression so accelerated and brute-force paths agree bit for bit.
#[inline]
pub fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

// Max-heap entry ordered by (distance, index).
#[derive(Debug, Clone, Copy)]
struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

const LEAF_SIZE: usize = 12;

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

/// Immutable kd-tree over a point set. Queries are exact; ties in distance
/// are broken toward the lower original index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    /// Builds over a raw slice. Panics on an empty slice.
    pub fn from_points(points: &[Vec3]) -> Self {
        assert!(!points.is_empty(), "spatial index needs at least one point");
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        index
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] <= lo[axis] {
            // all coincident
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vec3 {
        &self.points[index]
    }

    pub fn nearest(&self, q: &Vec3) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.nearest_rec(0, q, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    };
                    if cand.key_cmp(best) == Ordering::Less {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points in ascending (distance, index) order.
    pub fn knn(&self, q: &Vec3, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(|a, b| a.key_cmp(b));
        Ok(out)
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = HeapEntry(Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    });
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().expect("heap is full").0.dist_sq
                };
                if diff * diff <= worst {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }
}

/// Per-point scale: the largest distance among the `K` nearest other points.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScales {
    pub sigma: Vec<f64>,
}

impl LocalScales {
    pub fn mean(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.sigma.len() as f64
    }
}

/// Computes `sigma_p` for every point. The point itself is not one of its
/// own neighbours. `k` is capped at `len - 1` for small clouds.
pub fn compute_local_sigmas(cloud: &PointCloud, k: usize) -> Result<LocalScales> {
    compute_local_sigmas_with(&SpatialIndex::build(cloud), k)
}

pub fn compute_local_sigmas_with(index: &SpatialIndex, k: usize) -> Result<LocalScales> {
    let n = index.len();
    if n < 2 {
        return Err(Error::DegenerateInput(
            "local scales need at least two points".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let k_eff = if k > n - 1 {
        log::warn!("K = {k} exceeds cloud size - 1; using K = {}", n - 1);
        n - 1
    } else {
        k
    };
    let sigma = (0..n)
        .map(|i| {
            let nbrs = index.knn(index.point(i), k_eff + 1)?;
            let max_sq = nbrs
                .iter()
                .filter(|nb| nb.index != i)
                .take(k_eff)
                .map(|nb| nb.dist_sq)
                .fold(0.0, f64::max);
            Ok(max_sq.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LocalScales { sigma })
}
