use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::rng;
use crate::Vec3;

/// Draws `n` points area-uniformly from the mesh surface.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh_surface_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_mesh_surface`] but also returns the source face of each sample.
pub fn sample_mesh_surface_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh("mesh has zero total area".into()));
    }

    let mut rng = rng::rng(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(face);
        let s = rng.random::<f64>().sqrt();
        let r = rng.random::<f64>();
        points.push(a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r));
        faces.push(face);
    }
    Ok((PointCloud::new(points)?, faces))
}

/// Perturbs every coordinate by independent N(0, sigma^2) noise.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise standard deviation must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng::rng(seed);
    cloud.map(|p| {
        let e: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        p + Vec3::from(e) * sigma
    })
}
