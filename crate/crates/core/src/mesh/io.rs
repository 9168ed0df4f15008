//! Mesh files: JSON `{"vertices": [[x, y(, z)], ...], "triangles": [[i, j, k], ...]}`
//! for 2D and 3D meshes, and Wavefront-OBJ `v`/`f` text for 3D meshes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::{Mesh2D, Mesh3D};
use crate::error::IoError;

#[derive(Debug, Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<Vec<f64>>,
    triangles: Vec<[usize; 3]>,
}

fn coords<const D: usize>(raw: &[Vec<f64>], origin: &str) -> Result<Vec<[f64; D]>, IoError> {
    raw.iter()
        .enumerate()
        .map(|(i, v)| {
            <[f64; D]>::try_from(v.as_slice()).map_err(|_| {
                IoError::parse(
                    format!("{origin}: vertices[{i}]"),
                    format!("expected {D} coordinates, got {}", v.len()),
                )
            })
        })
        .collect()
}

pub fn mesh2d_from_json(text: &str, origin: &str) -> Result<Mesh2D, IoError> {
    let file: MeshFile = serde_json::from_str(text).map_err(|e| json_error(origin, &e))?;
    let vertices = coords::<2>(&file.vertices, origin)?
        .into_iter()
        .map(|[x, y]| Point2::new(x, y))
        .collect();
    Mesh2D::new(vertices, file.triangles).map_err(|e| IoError::parse(origin, e))
}

pub fn mesh3d_from_json(text: &str, origin: &str) -> Result<Mesh3D, IoError> {
    let file: MeshFile = serde_json::from_str(text).map_err(|e| json_error(origin, &e))?;
    let vertices = coords::<3>(&file.vertices, origin)?
        .into_iter()
        .map(|[x, y, z]| Point3::new(x, y, z))
        .collect();
    Mesh3D::new(vertices, file.triangles).map_err(|e| IoError::parse(origin, e))
}

pub fn mesh2d_to_json(mesh: &Mesh2D) -> String {
    let file = MeshFile {
        vertices: mesh.vertices().iter().map(|v| vec![v.x, v.y]).collect(),
        triangles: mesh.triangles().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("mesh serialization is infallible")
}

pub fn mesh3d_to_json(mesh: &Mesh3D) -> String {
    let file = MeshFile {
        vertices: mesh
            .vertices()
            .iter()
            .map(|v| vec![v.x, v.y, v.z])
            .collect(),
        triangles: mesh.triangles().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("mesh serialization is infallible")
}

pub(crate) fn json_error(origin: &str, e: &serde_json::Error) -> IoError {
    IoError::parse(format!("{origin}:{}:{}", e.line(), e.column()), e)
}

/// Parses `v x y z` and `f i j k` records (1-based indices; `i/t/n` forms and
/// negative relative indices accepted). Other record types are ignored.
pub fn mesh3d_from_obj(text: &str, origin: &str) -> Result<Mesh3D, IoError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let loc = || format!("{origin}:{}", lineno + 1);
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| IoError::parse(loc(), e)))
                    .collect::<Result<_, _>>()?;
                if xyz.len() != 3 {
                    return Err(IoError::parse(loc(), "vertex needs 3 coordinates"));
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or(s);
                        let i: i64 = head.parse().map_err(|e| IoError::parse(loc(), e))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(IoError::parse(loc(), format!("bad face index {i}")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(IoError::parse(loc(), "face needs at least 3 vertices"));
                }
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh3D::new(vertices, triangles).map_err(|e| IoError::parse(origin, e))
}

pub fn mesh3d_to_obj(mesh: &Mesh3D) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

fn read(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

fn is_obj(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("obj"))
}

/// Reads a 3D mesh, choosing OBJ or JSON by file extension.
pub fn read_mesh3d(path: impl AsRef<Path>) -> Result<Mesh3D, IoError> {
    let path = path.as_ref();
    let text = read(path)?;
    let origin = path.display().to_string();
    if is_obj(path) {
        mesh3d_from_obj(&text, &origin)
    } else {
        mesh3d_from_json(&text, &origin)
    }
}

pub fn read_mesh2d(path: impl AsRef<Path>) -> Result<Mesh2D, IoError> {
    let path = path.as_ref();
    mesh2d_from_json(&read(path)?, &path.display().to_string())
}

pub fn write_mesh3d(path: impl AsRef<Path>, mesh: &Mesh3D) -> Result<(), IoError> {
    let path = path.as_ref();
    let text = if is_obj(path) {
        mesh3d_to_obj(mesh)
    } else {
        mesh3d_to_json(mesh)
    };
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn write_mesh2d(path: impl AsRef<Path>, mesh: &Mesh2D) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, mesh2d_to_json(mesh)).map_err(|e| IoError::io(path, e))
}
