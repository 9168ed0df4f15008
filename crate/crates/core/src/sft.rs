//! Isometric shape inference with a particle system.
//!
//! Every vertex of the rest mesh is a particle; every mesh edge is a distance
//! constraint holding its rest length. One outer iteration applies, in order,
//! sightline projections (constrained vertices snap onto the camera ray
//! through their target pixel), known-point sphere constraints, and a fixed
//! number of Gauss-Seidel distance sweeps. Iteration stops once no particle
//! moves more than the tolerance between outer iterations.

use std::path::Path;

use nalgebra::{Isometry3, Point2, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, SftError};
use crate::mesh::{Edge, Mesh2D, Mesh3D, PointLocator};

/// Edges shorter than this have no usable direction.
pub const COLLAPSE_LENGTH: f64 = 1e-12;

/// Pinhole intrinsics plus image size, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, SftError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), SftError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(SftError::InvalidConstraint(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(SftError::InvalidConstraint(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Pixel of a camera-frame point.
    pub fn project(&self, p: &Point3<f64>) -> Point2<f64> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Unit camera-frame direction of the ray through pixel `px`.
    pub fn ray(&self, px: &Point2<f64>) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::new(
            (px.x - self.cx) / self.fx,
            (px.y - self.cy) / self.fy,
            1.0,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("intrinsics serialization is infallible")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, IoError> {
        let k: Self =
            serde_json::from_str(text).map_err(|e| crate::mesh::io::json_error(origin, &e))?;
        k.validate().map_err(|e| IoError::parse(origin, e))?;
        Ok(k)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| IoError::io(path.as_ref(), e))
    }
}

/// Intrinsics plus a camera-to-world pose; the identity pose makes the world
/// frame the camera frame (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Isometry3<f64>,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            pose: Isometry3::identity(),
        }
    }

    pub fn with_pose(intrinsics: CameraIntrinsics, pose: Isometry3<f64>) -> Self {
        Self { intrinsics, pose }
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    pub fn project(&self, p: &Point3<f64>) -> Point2<f64> {
        self.intrinsics
            .project(&self.pose.inverse_transform_point(p))
    }

    /// World-frame unit direction of the ray through `px`.
    pub fn ray(&self, px: &Point2<f64>) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(self.pose.rotation * self.intrinsics.ray(px).into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SightlineConstraint {
    pub vertex_index: usize,
    pub target: Point2<f64>,
}

/// Soft constraint: the vertex must lie within `radius` of `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownPointConstraint {
    pub vertex_index: usize,
    pub center: Point3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Distance sweeps per outer iteration.
    pub distance_iterations: usize,
    pub max_outer_iterations: usize,
    /// Convergence threshold on the largest per-vertex move (m).
    pub tolerance: f64,
    /// Smallest depth along a sightline (m).
    pub min_depth: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            distance_iterations: 10,
            max_outer_iterations: 500,
            tolerance: 1e-5,
            min_depth: 1e-3,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SftError> {
        if self.max_outer_iterations < 1 {
            return Err(SftError::InvalidConstraint(
                "at least one outer iteration is required".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(SftError::InvalidConstraint(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.min_depth > 0.0 && self.min_depth.is_finite()) {
            return Err(SftError::InvalidConstraint(format!(
                "min_depth must be positive, got {}",
                self.min_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSystem {
    positions: Vec<Point3<f64>>,
    edges: Vec<Edge>,
    camera: Camera,
    params: SolverParams,
}

impl ParticleSystem {
    /// Particles at `init`, with distance constraints taken from `rest`.
    pub fn new(
        rest: &Mesh3D,
        init: &[Point3<f64>],
        camera: Camera,
        params: SolverParams,
    ) -> Result<Self, SftError> {
        if init.len() != rest.vertex_count() {
            return Err(SftError::InvalidConstraint(format!(
                "initial shape has {} vertices, template has {}",
                init.len(),
                rest.vertex_count()
            )));
        }
        if init.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(SftError::InvalidConstraint(
                "non-finite initial position".into(),
            ));
        }
        if rest.edges().iter().any(|e| !(e.rest_length > 0.0)) {
            return Err(SftError::InvalidConstraint(
                "rest lengths must be positive".into(),
            ));
        }
        camera.intrinsics.validate()?;
        params.validate()?;
        Ok(Self {
            positions: init.to_vec(),
            edges: rest.edges().to_vec(),
            camera,
            params,
        })
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn validate_sightlines(&self, constraints: &[SightlineConstraint]) -> Result<(), SftError> {
        for c in constraints {
            if c.vertex_index >= self.positions.len() {
                return Err(SftError::InvalidConstraint(format!(
                    "sightline vertex {} out of range ({} particles)",
                    c.vertex_index,
                    self.positions.len()
                )));
            }
            if !(c.target.x.is_finite() && c.target.y.is_finite()) {
                return Err(SftError::InvalidConstraint(format!(
                    "sightline target for vertex {} is not finite",
                    c.vertex_index
                )));
            }
        }
        Ok(())
    }

    pub fn validate_known_points(
        &self,
        constraints: &[KnownPointConstraint],
    ) -> Result<(), SftError> {
        for c in constraints {
            if c.vertex_index >= self.positions.len() {
                return Err(SftError::InvalidConstraint(format!(
                    "known point vertex {} out of range ({} particles)",
                    c.vertex_index,
                    self.positions.len()
                )));
            }
            if !(c.radius > 0.0 && c.radius.is_finite()) || !c.center.iter().all(|v| v.is_finite())
            {
                return Err(SftError::InvalidConstraint(format!(
                    "known point for vertex {} needs a finite center and positive radius",
                    c.vertex_index
                )));
            }
        }
        Ok(())
    }

    /// Moves each constrained particle to the closest point of its sightline,
    /// never closer to the camera than `min_depth`.
    pub fn project_sightlines(&mut self, constraints: &[SightlineConstraint]) {
        let c = self.camera.center();
        for s in constraints {
            let d = self.camera.ray(&s.target);
            let p = &mut self.positions[s.vertex_index];
            let depth = (*p - c).dot(&d).max(self.params.min_depth);
            *p = c + d.into_inner() * depth;
        }
    }

    /// Pulls particles lying outside their sphere onto its surface.
    pub fn apply_known_points(&mut self, constraints: &[KnownPointConstraint]) {
        for k in constraints {
            let p = &mut self.positions[k.vertex_index];
            let offset = *p - k.center;
            let dist = offset.norm();
            if dist > k.radius {
                *p = k.center + offset * (k.radius / dist);
            } else if dist == 0.0 {
                *p = k.center + Vector3::z() * k.radius;
            }
        }
    }

    /// One Gauss-Seidel sweep over the edges in mesh order, equal masses.
    pub fn project_distance_constraints(&mut self) -> Result<(), SftError> {
        for e in &self.edges {
            let delta = self.positions[e.a] - self.positions[e.b];
            let len = delta.norm();
            if len < COLLAPSE_LENGTH {
                return Err(SftError::CollapsedEdge { a: e.a, b: e.b });
            }
            let corr = delta * (0.5 * (len - e.rest_length) / len);
            self.positions[e.a] -= corr;
            self.positions[e.b] += corr;
        }
        Ok(())
    }

    /// Largest relative deviation of an edge from its rest length.
    pub fn max_edge_error(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                ((self.positions[e.a] - self.positions[e.b]).norm() - e.rest_length).abs()
                    / e.rest_length
            })
            .fold(0.0, f64::max)
    }
}

/// Result of [`infer_shape`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEstimate {
    pub mesh: Mesh3D,
    pub outer_iterations: usize,
    /// Largest per-vertex move in the last outer iteration (m).
    pub final_displacement: f64,
    pub converged: bool,
    pub max_edge_error: f64,
}

fn check_constrained(
    rest: &Mesh3D,
    sightlines: &[SightlineConstraint],
    known: &[KnownPointConstraint],
) -> Result<(), SftError> {
    if !known.is_empty() && !sightlines.is_empty() {
        return Ok(());
    }
    let mut idx: Vec<usize> = sightlines.iter().map(|s| s.vertex_index).collect();
    idx.sort_unstable();
    idx.dedup();
    let pts: Vec<Point3<f64>> = idx.iter().map(|&i| rest.vertices()[i]).collect();
    if pts.len() >= 3 {
        let a = pts[0];
        let b = *pts
            .iter()
            .max_by(|p, q| (*p - a).norm().total_cmp(&(*q - a).norm()))
            .expect("non-empty");
        let ab = b - a;
        let span = ab.norm();
        if span > 0.0 {
            let off_line = pts
                .iter()
                .map(|p| (p - a).cross(&ab).norm() / span)
                .fold(0.0, f64::max);
            if off_line > 1e-6 * span {
                return Ok(());
            }
        }
    }
    Err(SftError::UnderConstrained(format!(
        "{} distinct sightline vertices and {} known points; need 3 non-collinear sightlines or a known point plus a sightline",
        pts.len(),
        known.len()
    )))
}

/// Solves for the isometric shape of `rest` satisfying the constraints,
/// starting from `init` (same topology).
///
/// If the iteration budget runs out with the last move within ten times the
/// tolerance, the estimate is returned with `converged == false`; beyond
/// that the estimate is carried by [`SftError::NoConvergence`].
pub fn infer_shape(
    rest: &Mesh3D,
    camera: &Camera,
    sightlines: &[SightlineConstraint],
    known: &[KnownPointConstraint],
    init: &Mesh3D,
    params: &SolverParams,
) -> Result<ShapeEstimate, SftError> {
    if init.triangles() != rest.triangles() {
        return Err(SftError::InvalidConstraint(
            "initial shape topology differs from template".into(),
        ));
    }
    let mut ps = ParticleSystem::new(rest, init.vertices(), *camera, *params)?;
    ps.validate_sightlines(sightlines)?;
    ps.validate_known_points(known)?;
    check_constrained(rest, sightlines, known)?;

    let mut prev = ps.positions.clone();
    let mut displacement = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_outer_iterations {
        iterations += 1;
        ps.project_sightlines(sightlines);
        ps.apply_known_points(known);
        for _ in 0..params.distance_iterations {
            ps.project_distance_constraints()?;
        }
        displacement = ps
            .positions
            .iter()
            .zip(&prev)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        if displacement < params.tolerance {
            converged = true;
            break;
        }
        prev.copy_from_slice(&ps.positions);
    }

    let estimate = ShapeEstimate {
        max_edge_error: ps.max_edge_error(),
        mesh: rest.with_positions(ps.positions)?,
        outer_iterations: iterations,
        final_displacement: displacement,
        converged,
    };
    if !converged && !(displacement <= 10.0 * params.tolerance) {
        return Err(SftError::NoConvergence {
            estimate: Box::new(estimate),
        });
    }
    Ok(estimate)
}

/// Sightline constraints for the vertices of every template cell that
/// contains at least one of `inliers`, targeting the transferred mesh.
/// Vertices are emitted once each, in index order.
pub fn select_salient_points(
    template: &Mesh2D,
    transferred: &Mesh2D,
    inliers: &[Point2<f64>],
) -> Vec<SightlineConstraint> {
    let mut qualified = vec![false; template.vertex_count()];
    let locator = PointLocator::new(template);
    for p in inliers {
        if let Some(t) = locator.containing_triangle(p) {
            for v in template.triangles()[t] {
                qualified[v] = true;
            }
        }
    }
    qualified
        .iter()
        .enumerate()
        .filter(|(_, &q)| q)
        .map(|(i, _)| SightlineConstraint {
            vertex_index: i,
            target: transferred.vertices()[i],
        })
        .collect()
}
