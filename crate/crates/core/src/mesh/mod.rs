//! Triangle meshes shared by every stage: the 3D rest mesh, deformed copies of
//! it, and 2D meshes living in texturemap or image pixel space.
//!
//! A [`Mesh3D`] carries the edge list with rest lengths used by the isometric
//! shape solver. Deformed meshes keep the rest lengths of the mesh they were
//! derived from ([`Mesh3D::with_positions`]), so a deformed surface can always
//! be audited against its rest shape.

mod barycentric;
pub mod io;

use std::collections::HashSet;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub use barycentric::{apply_barycentric, barycentric_coords, BarycentricAnchor, PointLocator};

/// Triangles below this area (in squared mesh units) are treated as degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Read-only view over the vertex and triangle arrays of a mesh of any dimension.
pub trait TriangleMesh<const D: usize> {
    fn vertices(&self) -> &[nalgebra::Point<f64, D>];
    fn triangles(&self) -> &[[usize; 3]];

    fn triangle_corners(&self, t: usize) -> Result<[nalgebra::Point<f64, D>; 3], GeometryError> {
        let tri = self
            .triangles()
            .get(t)
            .ok_or(GeometryError::IndexOutOfRange {
                index: t,
                len: self.triangles().len(),
            })?;
        let v = self.vertices();
        Ok([v[tri[0]], v[tri[1]], v[tri[2]]])
    }
}

/// Unordered vertex pair with its rest length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3D {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    vertices: Vec<Point2<f64>>,
    triangles: Vec<[usize; 3]>,
}

fn check_indices(n: usize, triangles: &[[usize; 3]]) -> Result<(), GeometryError> {
    for tri in triangles {
        for &i in tri {
            if i >= n {
                return Err(GeometryError::IndexOutOfRange { index: i, len: n });
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(GeometryError::InvalidMesh(format!(
                "triangle {tri:?} repeats a vertex"
            )));
        }
    }
    Ok(())
}

/// Unique unordered edges in order of first appearance while scanning triangles.
pub(crate) fn unique_edges(triangles: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                out.push(key);
            }
        }
    }
    out
}

impl Mesh3D {
    /// Builds a rest mesh. Edge rest lengths are measured on `vertices`.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, GeometryError> {
        if vertices
            .iter()
            .any(|v| !v.coords.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        check_indices(vertices.len(), &triangles)?;
        for (t, tri) in triangles.iter().enumerate() {
            let area = triangle_area_3d(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if area < MIN_TRIANGLE_AREA {
                return Err(GeometryError::DegenerateTriangle { triangle: t, area });
            }
        }
        let edges = unique_edges(&triangles)
            .into_iter()
            .map(|(a, b)| Edge {
                a,
                b,
                rest_length: (vertices[a] - vertices[b]).norm(),
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            edges,
        })
    }

    /// Same topology and rest lengths, new vertex positions (a deformed copy).
    pub fn with_positions(&self, positions: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        if positions.len() != self.vertices.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "expected {} positions, got {}",
                self.vertices.len(),
                positions.len()
            )));
        }
        if positions
            .iter()
            .any(|v| !v.coords.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(Self {
            vertices: positions,
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Largest relative deviation `|len - rest| / rest` over all edges.
    pub fn max_edge_error(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                ((self.vertices[e.a] - self.vertices[e.b]).norm() - e.rest_length).abs()
                    / e.rest_length
            })
            .fold(0.0, f64::max)
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    pub fn same_topology_2d(&self, other: &Mesh2D) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }
}

impl Mesh2D {
    pub fn new(
        vertices: Vec<Point2<f64>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, GeometryError> {
        if vertices
            .iter()
            .any(|v| !v.coords.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        check_indices(vertices.len(), &triangles)?;
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Same topology, new vertex positions.
    pub fn with_positions(&self, positions: Vec<Point2<f64>>) -> Result<Self, GeometryError> {
        if positions.len() != self.vertices.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "expected {} positions, got {}",
                self.vertices.len(),
                positions.len()
            )));
        }
        Mesh2D::new(positions, self.triangles.clone())
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn same_topology(&self, other: &Mesh2D) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }
}

impl TriangleMesh<3> for Mesh3D {
    fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
}

impl TriangleMesh<2> for Mesh2D {
    fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
}

pub(crate) fn triangle_area_3d(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Signed area, positive for counter-clockwise `(a, b, c)`.
pub(crate) fn signed_area_2d(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

/// Mean Euclidean distance over all unordered vertex pairs.
///
/// Used as the sample length `l_s` that scales the classification threshold.
pub fn mean_pairwise_distance(mesh: &Mesh2D) -> Result<f64, GeometryError> {
    let v = &mesh.vertices;
    let n = v.len();
    if n < 2 {
        return Err(GeometryError::DegenerateInput(format!(
            "mean pairwise distance needs at least 2 vertices, got {n}"
        )));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += (v[i] - v[j]).norm();
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Triangles of a regular `rows x cols` vertex grid (row-major vertex order),
/// two per quad, always split along the same diagonal.
pub fn grid_topology(rows: usize, cols: usize) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let i00 = r * cols + c;
            let i01 = i00 + 1;
            let i10 = i00 + cols;
            let i11 = i10 + 1;
            tris.push([i00, i10, i11]);
            tris.push([i00, i11, i01]);
        }
    }
    tris
}
