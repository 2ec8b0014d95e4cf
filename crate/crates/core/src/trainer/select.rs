use super::Snapshot;
use crate::error::{Error, Result};
use crate::extract::{marching_cubes, marching_cubes_banded, Extraction, GridSpec};
use crate::field::FieldParams;
use crate::metrics::chamfer_l1;
use crate::pointcloud::{sample_mesh_surface, PointCloud};

/// How snapshots are meshed and scored against the input cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub grid: GridSpec,
    /// Surface samples drawn from each snapshot mesh.
    pub n_samples: usize,
    pub seed: u64,
    /// `(coarse_step, band)` for narrow-band extraction; `None` marches the
    /// full grid.
    pub band: Option<(usize, f64)>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            n_samples: 10_000,
            seed: 0,
            band: Some((4, 1.0)),
        }
    }
}

impl SelectionConfig {
    pub fn extract(&self, params: &FieldParams) -> Result<Extraction> {
        match self.band {
            Some((step, band)) => marching_cubes_banded(params, &self.grid, step, band),
            None => marching_cubes(params, &self.grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Position of the winner in the snapshot list.
    pub index: usize,
    pub iteration: usize,
    /// Chamfer distance to the input per snapshot; `inf` for empty meshes.
    pub scores: Vec<f64>,
}

/// Index of the smallest score, the earliest on ties. Non-finite scores never
/// win; if every score is non-finite there is no valid model.
pub fn select_best_by(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no snapshots to select from".into()));
    }
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoValidModel)
}

/// Chamfer distance between samples of the extracted surface and the input
/// cloud, or `inf` when the surface is empty.
pub fn snapshot_score(params: &FieldParams, cloud: &PointCloud, config: &SelectionConfig) -> Result<f64> {
    let e = config.extract(params)?;
    if e.is_empty() || e.mesh.total_area() <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let samples = sample_mesh_surface(&e.mesh, config.n_samples, config.seed)?;
    chamfer_l1(&samples, cloud)
}

pub fn select_best_snapshot(
    snapshots: &[Snapshot],
    cloud: &PointCloud,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let scores = snapshots
        .iter()
        .map(|s| snapshot_score(&s.params, cloud, config))
        .collect::<Result<Vec<f64>>>()?;
    let index = select_best_by(&scores)?;
    Ok(SelectionResult {
        index,
        iteration: snapshots[index].iteration,
        scores,
    })
}
