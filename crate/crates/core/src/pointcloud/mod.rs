//! Point clouds, triangle meshes, and the synthetic inputs used by experiments.
//!
//! Everything downstream works in normalized model coordinates: the observed
//! cloud is mapped by a uniform scale and translation into the box
//! `[-0.45, 0.45]^3` (the unit box `[-0.5, 0.5]^3` with a 5% margin).

mod io;
mod mesh;
mod sampling;
pub mod shapes;

pub use io::{
    load_mesh, load_point_cloud, save_mesh_obj, save_mesh_ply, save_point_cloud, PointFormat,
};
pub use mesh::TriangleMesh;
pub use sampling::{add_gaussian_noise, sample_mesh_surface, sample_mesh_surface_with_faces};

use crate::error::{Error, Result};
use crate::Vec3;

/// Half-width of the normalized box after the margin is applied.
pub const NORMALIZED_HALF_EXTENT: f64 = 0.45;

/// An ordered, non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points that exactly repeat an earlier point.
    pub fn duplicate_count(&self) -> usize {
        let mut keys: Vec<[u64; 3]> = self
            .points
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        keys.sort_unstable();
        keys.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn map(&self, f: impl FnMut(&Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }
}

/// Uniform scale followed by a translation: `x' = scale * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub translation: Vec3,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        (p - self.translation) / self.scale
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.apply(p)).collect(),
        }
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.invert(p)).collect(),
        }
    }

    pub fn invert_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        mesh.map_vertices(|v| self.invert(v))
    }
}

/// Centers the bounding box at the origin and scales its longest side to
/// `2 * NORMALIZED_HALF_EXTENT`.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let (lo, hi) = cloud.bounding_box();
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::DegenerateInput(
            "all points are identical; bounding box has zero extent".into(),
        ));
    }
    let center = (lo + hi) * 0.5;
    let scale = 2.0 * NORMALIZED_HALF_EXTENT / extent;
    let transform = NormalizationTransform {
        scale,
        translation: -center * scale,
    };
    Ok((transform.apply_cloud(cloud), transform))
}
