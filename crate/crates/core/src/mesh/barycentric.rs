use nalgebra::{Point, Point2};
use serde::{Deserialize, Serialize};

use super::{signed_area_2d, Mesh2D, TriangleMesh, MIN_TRIANGLE_AREA};
use crate::error::GeometryError;

/// Weights below this are still treated as "inside" the triangle.
const INSIDE_TOLERANCE: f64 = 1e-12;

/// A point expressed relative to one triangle of a 2D mesh.
///
/// Weights always sum to one. They are convex for points inside the mesh and
/// may be negative for points extrapolated from the nearest triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycentricAnchor {
    pub triangle: usize,
    pub weights: [f64; 3],
}

/// Locates many points against one mesh, caching triangle bounding boxes.
#[derive(Debug)]
pub struct PointLocator<'a> {
    mesh: &'a Mesh2D,
    boxes: Vec<(Point2<f64>, Point2<f64>)>,
    areas: Vec<f64>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh2D) -> Self {
        let v = mesh.vertices();
        let mut boxes = Vec::with_capacity(mesh.triangles().len());
        let mut areas = Vec::with_capacity(mesh.triangles().len());
        for tri in mesh.triangles() {
            let [a, b, c] = [v[tri[0]], v[tri[1]], v[tri[2]]];
            boxes.push((a.inf(&b).inf(&c), a.sup(&b).sup(&c)));
            areas.push(signed_area_2d(&a, &b, &c));
        }
        Self { mesh, boxes, areas }
    }

    /// Index of the first triangle containing `p` (boundary inclusive).
    pub fn containing_triangle(&self, p: &Point2<f64>) -> Option<usize> {
        (0..self.boxes.len()).find(|&t| {
            let (lo, hi) = &self.boxes[t];
            let slack = 1e-9 * (1.0 + hi.x.abs().max(hi.y.abs()));
            if p.x < lo.x - slack || p.x > hi.x + slack || p.y < lo.y - slack || p.y > hi.y + slack
            {
                return false;
            }
            self.areas[t].abs() >= MIN_TRIANGLE_AREA
                && self.weights(t, p).iter().all(|&w| w >= -INSIDE_TOLERANCE)
        })
    }

    pub fn locate(&self, p: &Point2<f64>) -> Result<BarycentricAnchor, GeometryError> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(GeometryError::DegenerateInput(
                "non-finite query point".into(),
            ));
        }
        if let Some(t) = self.containing_triangle(p) {
            return Ok(BarycentricAnchor {
                triangle: t,
                weights: self.weights(t, p),
            });
        }
        let v = self.mesh.vertices();
        let mut best: Option<(usize, f64)> = None;
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let d = point_triangle_distance(p, &v[tri[0]], &v[tri[1]], &v[tri[2]]);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((t, d));
            }
        }
        let (t, _) =
            best.ok_or_else(|| GeometryError::DegenerateInput("mesh has no triangles".into()))?;
        if self.areas[t].abs() < MIN_TRIANGLE_AREA {
            return Err(GeometryError::DegenerateTriangle {
                triangle: t,
                area: self.areas[t].abs(),
            });
        }
        Ok(BarycentricAnchor {
            triangle: t,
            weights: self.weights(t, p),
        })
    }

    fn weights(&self, t: usize, p: &Point2<f64>) -> [f64; 3] {
        let tri = self.mesh.triangles()[t];
        let v = self.mesh.vertices();
        let (a, b, c) = (v[tri[0]], v[tri[1]], v[tri[2]]);
        let area = self.areas[t];
        let w0 = signed_area_2d(p, &b, &c) / area;
        let w1 = signed_area_2d(&a, p, &c) / area;
        [w0, w1, 1.0 - w0 - w1]
    }
}

fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn point_triangle_distance(
    p: &Point2<f64>,
    a: &Point2<f64>,
    b: &Point2<f64>,
    c: &Point2<f64>,
) -> f64 {
    let s0 = signed_area_2d(p, b, c);
    let s1 = signed_area_2d(a, p, c);
    let s2 = signed_area_2d(a, b, p);
    let inside = (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0);
    if inside && signed_area_2d(a, b, c) != 0.0 {
        return 0.0;
    }
    point_segment_distance(p, a, b)
        .min(point_segment_distance(p, b, c))
        .min(point_segment_distance(p, c, a))
}

/// Barycentric coordinates of `p` in the triangle of `mesh` containing it, or
/// extrapolated weights relative to the nearest triangle when `p` is outside.
pub fn barycentric_coords(
    p: &Point2<f64>,
    mesh: &Mesh2D,
) -> Result<BarycentricAnchor, GeometryError> {
    PointLocator::new(mesh).locate(p)
}

/// Weighted sum of the anchor triangle's corners in `mesh`.
pub fn apply_barycentric<const D: usize, M: TriangleMesh<D> + ?Sized>(
    anchor: &BarycentricAnchor,
    mesh: &M,
) -> Result<Point<f64, D>, GeometryError> {
    let [a, b, c] = mesh.triangle_corners(anchor.triangle)?;
    let [w0, w1, w2] = anchor.weights;
    Ok(Point::from(a.coords * w0 + b.coords * w1 + c.coords * w2))
}
