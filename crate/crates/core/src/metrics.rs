//! Surface reconstruction metrics: two-way Chamfer distances, F-score and
//! normal consistency, all computed on area-uniform surface samples.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{sample_mesh_surface_with_faces, PointCloud, TriangleMesh};
use crate::spatial::SpatialIndex;
use crate::Vec3;

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 100_000;

fn check_nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("metric inputs must be non-empty".into()));
    }
    Ok(())
}

/// Squared distance from every point of `from` to its nearest point in `to`.
fn nearest_sq(from: &[Vec3], to: &SpatialIndex) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest(p).dist_sq).collect()
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Two-way mean nearest-neighbour distance, each direction weighted by 1/2.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let (ab, ba) = directional(a, b)?;
    Ok(0.5 * mean(ab.iter().map(|d| d.sqrt()), ab.len())
        + 0.5 * mean(ba.iter().map(|d| d.sqrt()), ba.len()))
}

/// As [`chamfer_l1`] with squared distances.
pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let (ab, ba) = directional(a, b)?;
    Ok(0.5 * mean(ab.iter().copied(), ab.len()) + 0.5 * mean(ba.iter().copied(), ba.len()))
}

fn directional(a: &PointCloud, b: &PointCloud) -> Result<(Vec<f64>, Vec<f64>)> {
    check_nonempty(a.points(), b.points())?;
    let (ia, ib) = (SpatialIndex::build(a), SpatialIndex::build(b));
    Ok((nearest_sq(a.points(), &ib), nearest_sq(b.points(), &ia)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub fscore: f64,
    /// Fraction of predicted samples within `tau` of the ground truth.
    pub precision: f64,
    /// Fraction of ground-truth samples within `tau` of the prediction.
    pub recall: f64,
}

/// F-score at threshold `tau` (strict `<`). Zero when precision and recall
/// are both zero.
pub fn fscore(gt: &PointCloud, pred: &PointCloud, tau: f64) -> Result<FScore> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    let (gp, pg) = directional(gt, pred)?;
    let within = |d: &[f64]| d.iter().filter(|&&s| s.sqrt() < tau).count() as f64 / d.len() as f64;
    let recall = within(&gp);
    let precision = within(&pg);
    Ok(FScore {
        fscore: harmonic(precision, recall),
        precision,
        recall,
    })
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Oriented surface samples.
#[derive(Debug, Clone)]
pub struct SurfaceSamples {
    pub points: PointCloud,
    pub normals: Vec<Vec3>,
}

/// Area-uniform samples with the flat normal of their source face.
pub fn sample_with_normals(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    let (points, faces) = sample_mesh_surface_with_faces(mesh, n, seed)?;
    let normals = faces.iter().map(|&f| mesh.face_normal(f)).collect();
    Ok(SurfaceSamples { points, normals })
}

/// Symmetric mean of `n_v . n_closest(v)` between two oriented sample sets.
pub fn normal_consistency_samples(a: &SurfaceSamples, b: &SurfaceSamples) -> Result<f64> {
    check_nonempty(a.points.points(), b.points.points())?;
    let (ia, ib) = (SpatialIndex::build(&a.points), SpatialIndex::build(&b.points));
    let one_way = |from: &SurfaceSamples, to: &SurfaceSamples, index: &SpatialIndex| -> f64 {
        let dots: Vec<f64> = from
            .points
            .points()
            .par_iter()
            .zip(&from.normals)
            .map(|(p, n)| n.dot(&to.normals[index.nearest(p).index]))
            .collect();
        mean(dots.into_iter(), from.normals.len())
    };
    Ok(0.5 * one_way(a, b, &ib) + 0.5 * one_way(b, a, &ia))
}

/// Normal consistency of two meshes from `n_samples` samples on each, both
/// drawn with `seed`.
pub fn normal_consistency(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let a = sample_with_normals(pred, n_samples, seed)?;
    let b = sample_with_normals(gt, n_samples, seed)?;
    normal_consistency_samples(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            tau: DEFAULT_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub cd1: f64,
    pub cd2: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub nc: f64,
    pub tau: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "cd1,cd2,cd1_x100,cd2_x100,fscore,precision,recall,nc,tau,n_samples,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.cd1,
            self.cd2,
            self.cd1 * 100.0,
            self.cd2 * 100.0,
            self.fscore,
            self.precision,
            self.recall,
            self.nc,
            self.tau,
            self.n_samples,
            self.seed
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CD1 (x100)  {:.4}", self.cd1 * 100.0)?;
        writeln!(f, "CD2 (x100)  {:.6}", self.cd2 * 100.0)?;
        writeln!(
            f,
            "FS          {:.4}  (tau {}, precision {:.4}, recall {:.4})",
            self.fscore, self.tau, self.precision, self.recall
        )?;
        writeln!(f, "NC          {:.4}", self.nc)?;
        write!(f, "samples     {} per mesh, seed {}", self.n_samples, self.seed)
    }
}

/// All four metrics between a reconstruction and a reference mesh.
pub fn evaluate_reconstruction(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let p = sample_with_normals(pred, config.n_samples, config.seed)?;
    let g = sample_with_normals(gt, config.n_samples, config.seed)?;
    let fs = fscore(&g.points, &p.points, config.tau)?;
    Ok(MetricsReport {
        cd1: chamfer_l1(&p.points, &g.points)?,
        cd2: chamfer_l2(&p.points, &g.points)?,
        fscore: fs.fscore,
        precision: fs.precision,
        recall: fs.recall,
        nc: normal_consistency_samples(&p, &g)?,
        tau: config.tau,
        n_samples: config.n_samples,
        seed: config.seed,
    })
}
