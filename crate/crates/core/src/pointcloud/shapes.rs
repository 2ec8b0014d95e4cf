//! Analytic reference shapes for synthetic experiments.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::{PointCloud, TriangleMesh};
use crate::error::Result;
use crate::rng;
use crate::Vec3;

/// Signed distance to a sphere centered at the origin.
pub fn sphere_sdf(p: &Vec3, radius: f64) -> f64 {
    p.norm() - radius
}

/// Signed distance to a torus around the z axis.
pub fn torus_sdf(p: &Vec3, major: f64, minor: f64) -> f64 {
    let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
    (ring * ring + p.z * p.z).sqrt() - minor
}

/// Icosphere built by `subdivisions` rounds of 4:1 splitting, projected onto
/// the sphere. Faces wind outward.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(verts, faces).expect("icosphere is well formed")
}

/// Torus around the z axis sampled on a `major_segments x minor_segments` grid.
pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriangleMesh {
    let (nu, nv) = (major_segments.max(3), minor_segments.max(3));
    let mut verts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            verts.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriangleMesh::new(verts, faces).expect("torus is well formed")
}

/// Exact uniform samples on a sphere surface.
pub fn sample_sphere(center: Vec3, radius: f64, n: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = rng::rng(seed);
    let points = (0..n)
        .map(|_| loop {
            let v = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let len = v.norm();
            if len > 1e-12 {
                break center + v * (radius / len);
            }
        })
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = icosphere(0.3, 3);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.signed_volume() > 0.0);
        let exact = 4.0 / 3.0 * PI * 0.027;
        assert!((m.signed_volume() - exact).abs() / exact < 0.02);
        for f in 0..m.faces().len() {
            let [a, b, c] = m.triangle(f);
            assert!(m.face_normal(f).dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn torus_is_closed_genus_one() {
        let m = torus(0.3, 0.1, 48, 24);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 0);
        assert!(m.signed_volume() > 0.0);
        for v in m.vertices() {
            assert!(torus_sdf(v, 0.3, 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_samples_on_surface() {
        let s = sample_sphere(Vec3::new(0.1, 0.0, 0.0), 0.4, 500, 9).unwrap();
        for p in s.points() {
            assert!(((p - Vec3::new(0.1, 0.0, 0.0)).norm() - 0.4).abs() < 1e-12);
        }
    }
}
