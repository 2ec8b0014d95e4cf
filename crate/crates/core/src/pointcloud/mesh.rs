use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Vec3;

/// Indexed triangle mesh with optional per-face unit normals.
///
/// Winding is counter-clockwise when seen from the side the face normal
/// points to. When no normals are stored, [`TriangleMesh::face_normal`]
/// derives them from the winding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

const NORMAL_TOLERANCE: f64 = 1e-6;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {i} references a vertex out of range (have {n})"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!(
                    "face {i} repeats a vertex index"
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "vertex {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            vertices,
            faces,
            normals: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Attaches per-face normals; each must have unit length within 1e-6.
    pub fn with_face_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.faces.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals for {} faces",
                normals.len(),
                self.faces.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn stored_normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Stored normal if present, otherwise the geometric one. Zero-area faces
    /// without a stored normal yield the zero vector.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        if let Some(n) = &self.normals {
            return n[face];
        }
        let c = self.face_cross(face);
        let len = c.norm();
        if len > 0.0 {
            c / len
        } else {
            Vec3::zeros()
        }
    }

    /// Same geometry, every face normal negated (winding kept).
    pub fn with_flipped_normals(&self) -> Self {
        let normals = (0..self.faces.len()).map(|f| -self.face_normal(f)).collect();
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            normals: Some(normals),
        }
    }

    /// Reverses the winding of every face.
    pub fn reversed(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| -v).collect()),
        }
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: None,
        }
    }

    /// Number of incident faces for every undirected edge.
    pub fn edge_valence(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_valence().values().all(|&c| c == 2)
    }

    /// V - E + F over the vertices actually referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_valence().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Signed enclosed volume (positive for outward-facing closed meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}
