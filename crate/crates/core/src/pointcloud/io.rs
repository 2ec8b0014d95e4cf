//! ASCII readers and writers for `.xyz`, `.ply` and `.obj`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every coordinate bit-exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    Ply,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("xyz") | Some("txt") => Some(PointFormat::Xyz),
            Some("ply") => Some(PointFormat::Ply),
            _ => None,
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_coord(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number `{token}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate `{token}`")));
    }
    Ok(v)
}

pub fn load_point_cloud(path: impl AsRef<Path>, format: PointFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let points = match format {
        PointFormat::Xyz => parse_xyz(path, &text)?,
        PointFormat::Ply => parse_ply(path, &text)?.0,
    };
    if points.is_empty() {
        return Err(Error::EmptyInput(format!("{} contains no points", path.display())));
    }
    PointCloud::new(points)
}

fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected at least 3 values, found {}", tokens.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for (k, t) in tokens.iter().enumerate() {
            let v = parse_coord(path, line, t)?;
            if k < 3 {
                xyz[k] = v;
            }
        }
        points.push(Vec3::from(xyz));
    }
    Ok(points)
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String),
    List(String),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

type Faces = Vec<[u32; 3]>;

fn parse_ply(path: &Path, text: &str) -> Result<(Vec<Vec3>, Faces)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(parse_err(path, n, "missing `ply` magic")),
        None => return Err(Error::EmptyInput(format!("{} is empty", path.display()))),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tokens.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, n, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(parse_err(path, n, "malformed element declaration"));
                }
                let count = tokens[2]
                    .parse()
                    .map_err(|_| parse_err(path, n, "invalid element count"))?;
                elements.push(PlyElement {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, n, "property before any element"))?;
                let prop = match tokens.as_slice() {
                    ["property", "list", _, _, name] => PlyProperty::List(name.to_string()),
                    ["property", _, name] => PlyProperty::Scalar(name.to_string()),
                    _ => return Err(parse_err(path, n, "malformed property declaration")),
                };
                el.properties.push(prop);
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => {
                return Err(parse_err(path, n, format!("unknown header keyword `{other}`")))
            }
        }
    }
    if !header_done {
        return Err(parse_err(path, text.lines().count(), "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    for el in &elements {
        let axis_of = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        for _ in 0..el.count {
            let (n, line) = body.next().ok_or_else(|| {
                parse_err(
                    path,
                    text.lines().count(),
                    format!("unexpected end of file in element `{}`", el.name),
                )
            })?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut cursor = 0;
            let mut next = || -> Result<&str> {
                let t = tokens
                    .get(cursor)
                    .copied()
                    .ok_or_else(|| parse_err(path, n, "too few values"))?;
                cursor += 1;
                Ok(t)
            };
            let mut xyz = [f64::NAN; 3];
            let mut polygon: Vec<u32> = Vec::new();
            for prop in &el.properties {
                match prop {
                    PlyProperty::Scalar(name) => {
                        let t = next()?;
                        if el.name == "vertex" {
                            if let Some(axis) = axis_of(name) {
                                xyz[axis] = parse_coord(path, n, t)?;
                            }
                        }
                    }
                    PlyProperty::List(name) => {
                        let len: usize = next()?
                            .parse()
                            .map_err(|_| parse_err(path, n, "invalid list length"))?;
                        let wanted = el.name == "face"
                            && (name == "vertex_indices" || name == "vertex_index");
                        for _ in 0..len {
                            let t = next()?;
                            if wanted {
                                polygon.push(t.parse().map_err(|_| {
                                    parse_err(path, n, format!("invalid index `{t}`"))
                                })?);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                if xyz.iter().any(|c| c.is_nan()) {
                    return Err(parse_err(path, n, "vertex lacks x, y or z"));
                }
                vertices.push(Vec3::from(xyz));
            } else if el.name == "face" {
                triangulate_fan(&polygon, &mut faces);
            }
        }
    }
    Ok((vertices, faces))
}

fn triangulate_fan(polygon: &[u32], out: &mut Faces) {
    for k in 1..polygon.len().saturating_sub(1) {
        out.push([polygon[0], polygon[k], polygon[k + 1]]);
    }
}

fn parse_obj(path: &Path, text: &str) -> Result<(Vec<Vec3>, Faces)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 {
                    return Err(parse_err(path, line, "vertex needs 3 coordinates"));
                }
                let mut xyz = [0.0; 3];
                for k in 0..3 {
                    xyz[k] = parse_coord(path, line, coords[k])?;
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let mut polygon = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid face index `{t}`")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(path, line, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(path, line, format!("face index {idx} out of range")));
                    }
                    polygon.push(resolved as u32);
                }
                if polygon.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least 3 vertices"));
                }
                triangulate_fan(&polygon, &mut faces);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Loads a triangle mesh from `.obj` or ASCII `.ply`. Faces that repeat a
/// vertex index are dropped.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (vertices, mut faces) = match extension(path).as_deref() {
        Some("obj") => parse_obj(path, &text)?,
        Some("ply") => parse_ply(path, &text)?,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported mesh format: {}",
                path.display()
            )))
        }
    };
    let before = faces.len();
    faces.retain(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);
    if faces.len() != before {
        log::warn!(
            "{}: dropped {} degenerate faces",
            path.display(),
            before - faces.len()
        );
    }
    if faces.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no faces", path.display())));
    }
    TriangleMesh::new(vertices, faces)
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: PointFormat) -> Result<()> {
    let path = path.as_ref();
    write_file(path, |w| {
        if format == PointFormat::Ply {
            writeln!(w, "ply\nformat ascii 1.0")?;
            writeln!(w, "element vertex {}", cloud.len())?;
            writeln!(w, "property double x\nproperty double y\nproperty double z")?;
            writeln!(w, "end_header")?;
        }
        for p in cloud.points() {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    })
}

pub fn save_mesh_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    write_file(path.as_ref(), |w| {
        for v in mesh.vertices() {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in mesh.faces() {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    })
}

pub fn save_mesh_ply(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    write_file(path.as_ref(), |w| {
        writeln!(w, "ply\nformat ascii 1.0")?;
        writeln!(w, "element vertex {}", mesh.vertices().len())?;
        writeln!(w, "property double x\nproperty double y\nproperty double z")?;
        writeln!(w, "element face {}", mesh.faces().len())?;
        writeln!(w, "property list uchar int vertex_indices\nend_header")?;
        for v in mesh.vertices() {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for f in mesh.faces() {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reads_small_xyz() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.xyz", "# header\n0 0 0\n1 0 0\n\n0 1 0 # trailing\n");
        let c = load_point_cloud(&p, PointFormat::Xyz).unwrap();
        assert_eq!(c.points(), &[Vec3::zeros(), Vec3::x(), Vec3::y()]);
    }

    #[test]
    fn nan_is_a_parse_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.xyz", "0 0 nan\n");
        match load_point_cloud(&p, PointFormat::Xyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(&dir, "bad2.xyz", "0 0 0\n1 2\n");
        assert!(matches!(
            load_point_cloud(&p, PointFormat::Xyz),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.xyz", "# nothing\n\n");
        assert!(matches!(
            load_point_cloud(&p, PointFormat::Xyz),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn reads_ascii_ply_with_extra_properties() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from(
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 1024\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nend_header\n",
        );
        for i in 0..1024 {
            body.push_str(&format!("{} {} {} 255\n", i, i as f64 * 0.5, -1));
        }
        let p = write(&dir, "c.ply", &body);
        let c = load_point_cloud(&p, PointFormat::Ply).unwrap();
        assert_eq!(c.len(), 1024);
        assert_eq!(c.points()[3], Vec3::new(3.0, 1.5, -1.0));
    }

    #[test]
    fn binary_ply_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.ply", "ply\nformat binary_little_endian 1.0\nend_header\n");
        assert!(matches!(
            load_point_cloud(&p, PointFormat::Ply),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn obj_quads_are_fan_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "q.obj",
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n",
        );
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
        let p = write(&dir, "neg.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nf -3 -2 -1\n");
        assert_eq!(load_mesh(&p).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_mesh("/definitely/not/here.obj").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.obj"));
    }

    #[test]
    fn mesh_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.1, 0.2, 0.3),
                Vec3::new(1.0 / 3.0, -2e-17, 5.5),
                Vec3::new(-0.7, 1e10, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for name in ["m.obj", "m.ply"] {
            let p = dir.path().join(name);
            if name.ends_with("obj") {
                save_mesh_obj(&p, &m).unwrap();
            } else {
                save_mesh_ply(&p, &m).unwrap();
            }
            assert_eq!(load_mesh(&p).unwrap(), m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cloud_round_trip_is_bit_exact(
            raw in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 1..40),
            ply in any::<bool>(),
        ) {
            let pts: Vec<Vec3> = raw
                .iter()
                .filter(|(x, y, z)| x.is_finite() && y.is_finite() && z.is_finite())
                .map(|&(x, y, z)| Vec3::new(x, y, z))
                .collect();
            prop_assume!(!pts.is_empty());
            let cloud = PointCloud::new(pts).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (fmt, name) = if ply { (PointFormat::Ply, "p.ply") } else { (PointFormat::Xyz, "p.xyz") };
            let path = dir.path().join(name);
            save_point_cloud(&path, &cloud, fmt).unwrap();
            let back = load_point_cloud(&path, fmt).unwrap();
            for (a, b) in back.points().iter().zip(cloud.points()) {
                for k in 0..3 {
                    prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
        }
    }
}
