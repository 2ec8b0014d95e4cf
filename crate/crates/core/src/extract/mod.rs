//! Iso-surface extraction by marching cubes.
//!
//! The grid has `resolution` nodes per axis. Node values are computed in
//! z-slabs, cells are visited in (z, y, x) order and vertices are shared
//! between cells through a key on the grid edge, so the output is
//! deterministic and closed surfaces come out watertight.

mod tables;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{eval_batch, FieldParams};
use crate::pointcloud::{TriangleMesh, NORMALIZED_HALF_EXTENT};
use crate::Vec3;
use tables::{EDGE_TABLE, TRI_TABLE};

/// Anything that can be sampled on a grid.
pub trait ScalarField: Sync {
    fn values(&self, points: &[Vec3]) -> Result<Vec<f64>>;
}

impl ScalarField for FieldParams {
    fn values(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        eval_batch(self, points)
    }
}

/// A closed-form field.
pub struct Analytic<F>(pub F);

impl<F: Fn(&Vec3) -> f64 + Sync> ScalarField for Analytic<F> {
    fn values(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(points.iter().map(&self.0).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Nodes per axis.
    pub resolution: usize,
    pub min: Vec3,
    pub max: Vec3,
    pub iso: f64,
}

impl Default for GridSpec {
    /// The normalized box inflated by 10%.
    fn default() -> Self {
        let h = 1.1 * (NORMALIZED_HALF_EXTENT / 0.9);
        Self {
            resolution: 128,
            min: Vec3::repeat(-h),
            max: Vec3::repeat(h),
            iso: 0.0,
        }
    }
}

impl GridSpec {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
        }
        let ext = self.max - self.min;
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !ext.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("grid bounds are degenerate".into()));
        }
        if !self.iso.is_finite() {
            return Err(Error::InvalidArgument("iso value must be finite".into()));
        }
        Ok(())
    }

    /// Edge lengths of one cell.
    pub fn cell_size(&self) -> Vec3 {
        (self.max - self.min) / (self.resolution - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = self.cell_size();
        Vec3::new(
            self.min.x + i as f64 * c.x,
            self.min.y + j as f64 * c.y,
            self.min.z + k as f64 * c.z,
        )
    }

    fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    fn unlinear(&self, n: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (n % r, (n / r) % r, n / (r * r))
    }
}

/// Corner offsets of a cell.
const CORNERS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (1, 1, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (1, 1, 1),
    (0, 1, 1),
];

/// Corner pairs joined by each cell edge.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Result of an extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub mesh: TriangleMesh,
    /// Nodes at which the field was evaluated.
    pub evaluations: usize,
}

impl Extraction {
    /// True when the field never crossed the iso value on the grid.
    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }
}

/// Marching cubes over every cell of the grid.
pub fn marching_cubes(field: &dyn ScalarField, grid: &GridSpec) -> Result<Extraction> {
    grid.validate()?;
    let r = grid.resolution;
    let slabs: Vec<Result<Vec<f64>>> = (0..r)
        .into_par_iter()
        .map(|k| {
            let pts: Vec<Vec3> = (0..r * r).map(|n| grid.node(n % r, n / r, k)).collect();
            field.values(&pts)
        })
        .collect();
    let mut values = Vec::with_capacity(r * r * r);
    for s in slabs {
        values.extend(s?);
    }
    let cells = (0..r - 1).flat_map(move |k| {
        (0..r - 1).flat_map(move |j| (0..r - 1).map(move |i| (i, j, k)))
    });
    let mesh = march(grid, cells, |n| values[n])?;
    Ok(Extraction {
        mesh,
        evaluations: r * r * r,
    })
}

/// Marching cubes restricted to a narrow band around the surface.
///
/// The field is first sampled every `coarse_step` nodes. A coarse block is
/// refined when its corner values change sign or come within
/// `band * block diagonal` of the iso value; only cells inside refined blocks
/// are marched. Every point of a block lies within half a diagonal of some
/// corner, so for fields whose gradient norm stays below `2 * band` every
/// crossing cell is refined and the output equals [`marching_cubes`].
pub fn marching_cubes_banded(
    field: &dyn ScalarField,
    grid: &GridSpec,
    coarse_step: usize,
    band: f64,
) -> Result<Extraction> {
    grid.validate()?;
    if coarse_step < 1 {
        return Err(Error::InvalidArgument("coarse step must be at least 1".into()));
    }
    let r = grid.resolution;
    let mut ticks: Vec<usize> = (0..r).step_by(coarse_step).collect();
    if *ticks.last().expect("r >= 2") != r - 1 {
        ticks.push(r - 1);
    }
    let nt = ticks.len();
    let coarse_pts: Vec<Vec3> = (0..nt * nt * nt)
        .map(|n| grid.node(ticks[n % nt], ticks[(n / nt) % nt], ticks[n / (nt * nt)]))
        .collect();
    let coarse = eval_chunked(field, &coarse_pts)?;
    let cv = |a: usize, b: usize, c: usize| coarse[(c * nt + b) * nt + a];

    let cell = grid.cell_size();
    let mut active: Vec<(usize, usize, usize)> = Vec::new();
    for c in 0..nt - 1 {
        for b in 0..nt - 1 {
            for a in 0..nt - 1 {
                let vals: Vec<f64> = CORNERS
                    .iter()
                    .map(|&(dx, dy, dz)| cv(a + dx, b + dy, c + dz) - grid.iso)
                    .collect();
                let diag = Vec3::new(
                    (ticks[a + 1] - ticks[a]) as f64 * cell.x,
                    (ticks[b + 1] - ticks[b]) as f64 * cell.y,
                    (ticks[c + 1] - ticks[c]) as f64 * cell.z,
                )
                .norm();
                let crosses = vals.iter().any(|&v| v < 0.0) && vals.iter().any(|&v| v >= 0.0);
                let near = vals.iter().any(|v| v.abs() < band * diag);
                if crosses || near {
                    active.push((a, b, c));
                }
            }
        }
    }

    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for &(a, b, c) in &active {
        for k in ticks[c]..ticks[c + 1] {
            for j in ticks[b]..ticks[b + 1] {
                for i in ticks[a]..ticks[a + 1] {
                    cells.push((i, j, k));
                }
            }
        }
    }
    cells.sort_unstable_by_key(|&(i, j, k)| grid.linear(i, j, k));
    let mut nodes: Vec<usize> = cells
        .iter()
        .flat_map(|&(i, j, k)| {
            CORNERS
                .iter()
                .map(move |&(dx, dy, dz)| grid.linear(i + dx, j + dy, k + dz))
        })
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let pts: Vec<Vec3> = nodes
        .iter()
        .map(|&n| {
            let (i, j, k) = grid.unlinear(n);
            grid.node(i, j, k)
        })
        .collect();
    let vals = eval_chunked(field, &pts)?;
    let lookup = |n: usize| vals[nodes.binary_search(&n).expect("node was evaluated")];
    let mesh = march(grid, cells.into_iter(), lookup)?;
    Ok(Extraction {
        mesh,
        evaluations: coarse_pts.len() + nodes.len(),
    })
}

fn eval_chunked(field: &dyn ScalarField, pts: &[Vec3]) -> Result<Vec<f64>> {
    const EVAL_CHUNK: usize = 8192;
    let parts: Vec<Result<Vec<f64>>> = pts.par_chunks(EVAL_CHUNK).map(|c| field.values(c)).collect();
    let mut out = Vec::with_capacity(pts.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn march(
    grid: &GridSpec,
    cells: impl Iterator<Item = (usize, usize, usize)>,
    value: impl Fn(usize) -> f64,
) -> Result<TriangleMesh> {
    let iso = grid.iso;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();
    for (i, j, k) in cells {
        let mut ids = [0usize; 8];
        let mut vals = [0.0; 8];
        let mut case = 0usize;
        for (c, &(dx, dy, dz)) in CORNERS.iter().enumerate() {
            ids[c] = grid.linear(i + dx, j + dy, k + dz);
            vals[c] = value(ids[c]);
            if !vals[c].is_finite() {
                return Err(Error::NonFiniteLayer { layer: 0 });
            }
            if vals[c] < iso {
                case |= 1 << c;
            }
        }
        let crossed = EDGE_TABLE[case];
        if crossed == 0 {
            continue;
        }
        let mut edge_ids = [u32::MAX; 12];
        for (e, &(a, b)) in EDGES.iter().enumerate() {
            if crossed & (1 << e) == 0 {
                continue;
            }
            // interpolate from the lower node so both cells sharing the
            // edge produce the same vertex
            let (lo, hi) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
            let axis = match ids[hi] - ids[lo] {
                1 => 0,
                d if d == grid.resolution => 1,
                _ => 2,
            };
            let key = ids[lo] * 3 + axis;
            edge_ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                let (pl, ph) = (corner_pos(grid, i, j, k, lo), corner_pos(grid, i, j, k, hi));
                let t = (iso - vals[lo]) / (vals[hi] - vals[lo]);
                vertices.push(pl + (ph - pl) * t);
                (vertices.len() - 1) as u32
            });
        }
        for tri in TRI_TABLE[case].chunks_exact(3) {
            if tri[0] < 0 {
                break;
            }
            let v = |e: i8| edge_ids[e as usize];
            // table winding faces the inside; emit reversed so normals point
            // toward larger field values
            faces.push([v(tri[0]), v(tri[2]), v(tri[1])]);
        }
    }
    if vertices.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("mesh too large for 32-bit indices".into()));
    }
    TriangleMesh::new(vertices, faces)
}

fn corner_pos(grid: &GridSpec, i: usize, j: usize, k: usize, corner: usize) -> Vec3 {
    let (dx, dy, dz) = CORNERS[corner];
    grid.node(i + dx, j + dy, k + dz)
}
