//! Synthetic scenes with exact ground truth: a flat grid sheet, isometric
//! deformations driven by two rigidly moved boundary cells, and match sets
//! with a controlled fraction of mismatches.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point2, Point3, Translation3, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::mesh::{apply_barycentric, grid_topology, Mesh2D, Mesh3D, PointLocator};
use crate::mismatch::{MatchLabels, MatchSet};
use crate::sft::CameraIntrinsics;

/// Matches closer than this to their true image location are correct.
pub const MATCH_EPSILON: f64 = 1e-9;

/// Regular grid sheet: rest mesh in metres (z = 0, centred on the origin)
/// and its flat texturemap counterpart in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RestGrid {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub rest: Mesh3D,
    pub flat: Mesh2D,
}

impl RestGrid {
    /// The rest mesh moved to depth `z` in front of the camera.
    pub fn posed(&self, z: f64) -> Mesh3D {
        self.rest
            .with_positions(
                self.rest
                    .vertices()
                    .iter()
                    .map(|p| p + Vector3::new(0.0, 0.0, z))
                    .collect(),
            )
            .expect("translation keeps the mesh valid")
    }

    /// Vertex indices of the middle-row boundary cell on the left and right.
    pub fn pinned_cells(&self) -> [[usize; 4]; 2] {
        let r = (self.rows - 2) / 2;
        let cell = |c: usize| {
            let i = r * self.cols + c;
            [i, i + 1, i + self.cols, i + self.cols + 1]
        };
        [cell(0), cell(self.cols - 2)]
    }
}

/// `rows x cols` vertices `spacing` metres apart; the flat mesh places
/// vertex `(r, c)` at `(c, r) * spacing * px_per_m` pixels.
pub fn generate_rest_mesh(
    rows: usize,
    cols: usize,
    spacing: f64,
    px_per_m: f64,
) -> Result<RestGrid, BenchError> {
    if rows < 2 || cols < 2 {
        return Err(BenchError::InvalidScenario(format!(
            "grid needs at least 2x2 vertices, got {rows}x{cols}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite() && px_per_m > 0.0 && px_per_m.is_finite()) {
        return Err(BenchError::InvalidScenario(
            "spacing and pixel scale must be positive".into(),
        ));
    }
    let (w, h) = ((cols - 1) as f64 * spacing, (rows - 1) as f64 * spacing);
    let mut v3 = Vec::with_capacity(rows * cols);
    let mut v2 = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64 * spacing, r as f64 * spacing);
            v3.push(Point3::new(x - w / 2.0, y - h / 2.0, 0.0));
            v2.push(Point2::new(x * px_per_m, y * px_per_m));
        }
    }
    let tris = grid_topology(rows, cols);
    Ok(RestGrid {
        rows,
        cols,
        spacing,
        rest: Mesh3D::new(v3, tris.clone())?,
        flat: Mesh2D::new(v2, tris)?,
    })
}

/// Default deformation scale: arches of roughly 1 to 2 cm on the 36 cm sheet.
pub const DEFAULT_MAGNITUDE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    /// Scales pin rotations and translations; 0 leaves the sheet at rest.
    pub magnitude: f64,
    pub max_sweeps: usize,
    /// Relaxation stops once every edge is within this relative error.
    pub tolerance: f64,
    /// Largest relative edge error accepted in the output.
    pub audit: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            magnitude: DEFAULT_MAGNITUDE,
            max_sweeps: 20_000,
            tolerance: 1e-3,
            audit: 5e-3,
        }
    }
}

/// Rigid motion of one pinned cell, about the cell's own centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinMotion {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl PinMotion {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn about(&self, center: &Point3<f64>) -> Isometry3<f64> {
        Translation3::from(center.coords + self.translation)
            * Isometry3::from_parts(Translation3::identity(), self.rotation)
            * Translation3::from(-center.coords)
    }

    pub fn interpolate(&self, other: &Self, t: f64) -> Self {
        Self {
            rotation: self.rotation.slerp(&other.rotation, t),
            translation: self.translation.lerp(&other.translation, t),
        }
    }
}

fn centroid(mesh: &Mesh3D, idx: &[usize]) -> Point3<f64> {
    Point3::from(
        idx.iter()
            .map(|&i| mesh.vertices()[i].coords)
            .sum::<Vector3<f64>>()
            / idx.len() as f64,
    )
}

/// Random pin motions plus the side (`±1` in z) the sheet bulges to.
///
/// Both cells move inwards; each is tilted to roughly match the end slope
/// of the arch that the compression produces, so the sheet bends smoothly
/// instead of creasing at the pinned cells. Small twists, shears and depth
/// offsets are added on top. Samples are redrawn until an isometric sheet
/// fits between the moved cells.
pub fn sample_pin_motions(
    grid: &RestGrid,
    posed: &Mesh3D,
    rng: &mut impl Rng,
    magnitude: f64,
) -> ([PinMotion; 2], f64) {
    let width = (grid.cols - 1) as f64 * grid.spacing;
    let cells = grid.pinned_cells();
    let span = (centroid(posed, &cells[1]) - centroid(posed, &cells[0])).norm();
    loop {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let inward = [0, 1].map(|_| magnitude * rng.random_range(0.01..0.04) * width);
        let chord = span - inward[0] - inward[1];
        let height = (2.0 / PI) * (span * (span - chord)).sqrt();
        let slope = (PI * height / chord).atan();
        let mut motion = |side: f64, push: f64| {
            let tilt = UnitQuaternion::from_axis_angle(
                &Vector3::y_axis(),
                -side * sign * slope * rng.random_range(0.8..1.2),
            );
            let twist = UnitQuaternion::from_axis_angle(
                &Vector3::x_axis(),
                magnitude * rng.random_range(-0.05..0.05),
            );
            PinMotion {
                rotation: twist * tilt,
                translation: Vector3::new(
                    side * push,
                    magnitude * rng.random_range(-0.005..0.005) * width,
                    magnitude * rng.random_range(-0.05..0.05) * width,
                ),
            }
        };
        let pins = [motion(1.0, inward[0]), motion(-1.0, inward[1])];
        if feasible(grid, posed, &pins) {
            return (pins, sign);
        }
    }
}

/// Every left/right pinned pair ends up no further apart than on the flat sheet.
fn feasible(grid: &RestGrid, posed: &Mesh3D, pins: &[PinMotion; 2]) -> bool {
    let cells = grid.pinned_cells();
    let [tl, tr] = [0, 1].map(|s| pins[s].about(&centroid(posed, &cells[s])));
    let v = posed.vertices();
    cells[0].iter().all(|&a| {
        cells[1]
            .iter()
            .all(|&b| (tl * v[a] - tr * v[b]).norm() <= (1.0 - 1e-6) * (v[a] - v[b]).norm())
    })
}

/// Initial guess: per-column blend of the two pin motions plus an arch in
/// `bulge_sign * z` taking up the compression between the pinned cells.
fn blended_start(
    grid: &RestGrid,
    posed: &Mesh3D,
    pins: &[PinMotion; 2],
    bulge_sign: f64,
) -> Vec<Point3<f64>> {
    let cells = grid.pinned_cells();
    let [cl, cr] = [0, 1].map(|s| centroid(posed, &cells[s]));
    let [tl, tr] = [pins[0].about(&cl), pins[1].about(&cr)];
    let rest_span = (cr - cl).norm();
    let chord = (tr * cr - tl * cl).norm();
    let height = (2.0 / PI) * (rest_span * (rest_span - chord).max(0.0)).sqrt();
    posed
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = (i % grid.cols) as f64 / (grid.cols - 1) as f64;
            let blended = Point3::from((tl * p).coords * (1.0 - t) + (tr * p).coords * t);
            let s = ((p.x - cl.x) / (cr.x - cl.x)).clamp(0.0, 1.0);
            blended + Vector3::z() * (bulge_sign * height * (PI * s).sin())
        })
        .collect()
}

/// Relaxes `start` towards isometry with the pinned cells held at their
/// moved positions.
fn relax(
    grid: &RestGrid,
    posed: &Mesh3D,
    pins: &[PinMotion; 2],
    mut positions: Vec<Point3<f64>>,
    cfg: &DeformConfig,
) -> Result<Mesh3D, BenchError> {
    let cells = grid.pinned_cells();
    let mut pinned = vec![false; positions.len()];
    for (s, cell) in cells.iter().enumerate() {
        let t = pins[s].about(&centroid(posed, cell));
        for &i in cell {
            pinned[i] = true;
            positions[i] = t * posed.vertices()[i];
        }
    }
    let edges = posed.edges();
    let max_error = |pos: &[Point3<f64>]| {
        edges
            .iter()
            .map(|e| ((pos[e.a] - pos[e.b]).norm() - e.rest_length).abs() / e.rest_length)
            .fold(0.0, f64::max)
    };
    let mut sweeps = 0;
    while max_error(&positions) > cfg.tolerance && sweeps < cfg.max_sweeps {
        for _ in 0..10 {
            for e in edges {
                let (fa, fb) = (!pinned[e.a], !pinned[e.b]);
                if !(fa || fb) {
                    continue;
                }
                let delta = positions[e.a] - positions[e.b];
                let len = delta.norm();
                if len < 1e-12 {
                    continue;
                }
                let corr = delta * ((len - e.rest_length) / len);
                let share = if fa && fb { 0.5 } else { 1.0 };
                if fa {
                    positions[e.a] -= corr * share;
                }
                if fb {
                    positions[e.b] += corr * share;
                }
            }
        }
        sweeps += 10;
    }
    let err = max_error(&positions);
    if !(err <= cfg.audit) {
        return Err(BenchError::NoConvergence {
            max_error: err * 100.0,
            sweeps,
        });
    }
    Ok(posed.with_positions(positions)?)
}

/// Isometrically deformed copy of `grid` posed at `depth`: the middle-row
/// boundary cells are moved by random rigid motions and the rest of the
/// sheet relaxes around them. Deterministic per seed.
pub fn deform_mesh(
    grid: &RestGrid,
    depth: f64,
    seed: u64,
    cfg: &DeformConfig,
) -> Result<Mesh3D, BenchError> {
    let posed = grid.posed(depth);
    if cfg.magnitude == 0.0 {
        return Ok(posed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pins, sign) = sample_pin_motions(grid, &posed, &mut rng, cfg.magnitude);
    relax(
        grid,
        &posed,
        &pins,
        blended_start(grid, &posed, &pins, sign),
        cfg,
    )
}

/// `frames` deformations moving smoothly between two random pin
/// configurations, each relaxed from the previous frame's shape.
pub fn deform_sequence(
    grid: &RestGrid,
    depth: f64,
    frames: usize,
    seed: u64,
    cfg: &DeformConfig,
) -> Result<Vec<Mesh3D>, BenchError> {
    let posed = grid.posed(depth);
    if cfg.magnitude == 0.0 {
        return Ok(vec![posed; frames]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, end, sign) = loop {
        let (a, sign) = sample_pin_motions(grid, &posed, &mut rng, cfg.magnitude);
        let b = loop {
            let (b, s) = sample_pin_motions(grid, &posed, &mut rng, cfg.magnitude);
            if s == sign {
                break b;
            }
        };
        let path_ok = (0..=20).all(|k| {
            let t = k as f64 / 20.0;
            feasible(
                grid,
                &posed,
                &[a[0].interpolate(&b[0], t), a[1].interpolate(&b[1], t)],
            )
        });
        if path_ok {
            break (a, b, sign);
        }
    };
    let mut out: Vec<Mesh3D> = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = if frames > 1 {
            k as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let pins = [
            start[0].interpolate(&end[0], t),
            start[1].interpolate(&end[1], t),
        ];
        let init = match out.last() {
            Some(prev) => prev.vertices().to_vec(),
            None => blended_start(grid, &posed, &pins, sign),
        };
        out.push(relax(grid, &posed, &pins, init, cfg)?);
    }
    Ok(out)
}

/// Matches with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMatches {
    pub matches: MatchSet,
    pub labels: MatchLabels,
    /// True image location of every template point (px).
    pub true_image_points: Vec<Point2<f64>>,
    /// True 3D location of every template point (m).
    pub true_points_3d: Vec<Point3<f64>>,
}

/// Template points uniform over the flat mesh's bounding rectangle, imaged
/// through the deformed mesh; exactly `round(n * (1 - correct_rate))` of
/// them are relocated uniformly over the image as mismatches.
pub fn generate_matches(
    flat: &Mesh2D,
    deformed: &Mesh3D,
    intrinsics: &CameraIntrinsics,
    n_matches: usize,
    correct_rate: f64,
    rng: &mut impl Rng,
) -> Result<SyntheticMatches, BenchError> {
    if n_matches < 3 {
        return Err(BenchError::InvalidScenario(format!(
            "need at least 3 matches, got {n_matches}"
        )));
    }
    if !(correct_rate > 0.0 && correct_rate <= 1.0) {
        return Err(BenchError::InvalidScenario(format!(
            "correct rate must be in (0, 1], got {correct_rate}"
        )));
    }
    let (lo, hi) = flat.bounds();
    let locator = PointLocator::new(flat);
    let mut template = Vec::with_capacity(n_matches);
    let mut truth_2d = Vec::with_capacity(n_matches);
    let mut truth_3d = Vec::with_capacity(n_matches);
    for _ in 0..n_matches {
        let p = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        let anchor = locator.locate(&p)?;
        let x = apply_barycentric(&anchor, deformed)?;
        template.push(p);
        truth_2d.push(intrinsics.project(&x));
        truth_3d.push(x);
    }
    let n_wrong = (n_matches as f64 * (1.0 - correct_rate)).round() as usize;
    let mut image = truth_2d.clone();
    let mut correct = vec![true; n_matches];
    let (w, h) = (intrinsics.width as f64, intrinsics.height as f64);
    for i in sample(rng, n_matches, n_wrong).into_vec() {
        let q = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        correct[i] = (q - truth_2d[i]).norm() < MATCH_EPSILON;
        image[i] = q;
    }
    Ok(SyntheticMatches {
        matches: MatchSet::new(template, image).expect("generated matches are finite"),
        labels: MatchLabels {
            is_correct: correct,
        },
        true_image_points: truth_2d,
        true_points_3d: truth_3d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> RestGrid {
        generate_rest_mesh(6, 10, 0.04, 1000.0).unwrap()
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn rest_mesh_combinatorics() {
        let g = grid();
        assert_eq!(g.rest.vertex_count(), 60);
        assert_eq!(g.rest.triangles().len(), 90);
        assert_eq!(g.rest.edges().len(), 149);
        for e in g.rest.edges() {
            let l = e.rest_length;
            assert!(
                (l - 0.04).abs() < 1e-12 || (l - 0.04 * 2f64.sqrt()).abs() < 1e-12,
                "{l}"
            );
        }
        let small = generate_rest_mesh(2, 2, 0.1, 100.0).unwrap();
        assert_eq!(
            (
                small.rest.vertex_count(),
                small.rest.triangles().len(),
                small.rest.edges().len()
            ),
            (4, 2, 5)
        );
        assert!(generate_rest_mesh(1, 5, 0.1, 100.0).is_err());
    }

    #[test]
    fn pinned_cells_are_middle_row_ends() {
        assert_eq!(grid().pinned_cells(), [[20, 21, 30, 31], [28, 29, 38, 39]]);
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let g = grid();
        let cfg = DeformConfig {
            magnitude: 0.0,
            ..Default::default()
        };
        let m = deform_mesh(&g, 1.0, 7, &cfg).unwrap();
        for (a, b) in m.vertices().iter().zip(g.posed(1.0).vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn deformations_pass_isometry_audit() {
        let g = grid();
        let cfg = DeformConfig::default();
        for seed in 0..100 {
            let m = deform_mesh(&g, 1.0, seed, &cfg).unwrap();
            assert!(
                m.max_edge_error() < 5e-3,
                "seed {seed}: {}",
                m.max_edge_error()
            );
        }
    }

    #[test]
    fn seeds_give_distinct_deterministic_shapes() {
        let g = grid();
        let cfg = DeformConfig::default();
        let a = deform_mesh(&g, 1.0, 1, &cfg).unwrap();
        let b = deform_mesh(&g, 1.0, 2, &cfg).unwrap();
        assert_eq!(a, deform_mesh(&g, 1.0, 1, &cfg).unwrap());
        let max_diff = a
            .vertices()
            .iter()
            .zip(b.vertices())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-3);
    }

    #[test]
    fn sequence_moves_smoothly() {
        let g = grid();
        let frames = deform_sequence(&g, 1.0, 12, 3, &DeformConfig::default()).unwrap();
        assert_eq!(frames.len(), 12);
        for w in frames.windows(2) {
            assert!(w[1].max_edge_error() < 5e-3);
            let step = w[0]
                .vertices()
                .iter()
                .zip(w[1].vertices())
                .map(|(p, q)| (p - q).norm())
                .fold(0.0, f64::max);
            assert!(step < 0.05, "{step}");
        }
    }

    #[test]
    fn exact_mismatch_count_and_sound_labels() {
        let g = grid();
        let m = deform_mesh(&g, 1.0, 4, &DeformConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_matches(&g.flat, &m, &intrinsics(), 100, 0.7, &mut rng).unwrap();
        assert_eq!(s.labels.is_correct.iter().filter(|c| !**c).count(), 30);
        for i in 0..100 {
            let d = (s.matches.image_points()[i] - s.true_image_points[i]).norm();
            assert_eq!(s.labels.is_correct[i], d < MATCH_EPSILON);
        }
    }

    #[test]
    fn all_correct_matches_follow_the_surface() {
        let g = grid();
        let m = deform_mesh(&g, 1.0, 5, &DeformConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_matches(&g.flat, &m, &intrinsics(), 200, 1.0, &mut rng).unwrap();
        assert!(s.labels.is_correct.iter().all(|&c| c));
        for (q, x) in s.matches.image_points().iter().zip(&s.true_points_3d) {
            assert!((intrinsics().project(x) - q).norm() < 1e-9);
        }
    }

    #[test]
    fn mismatches_are_uniform_over_the_image() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let g = grid();
        let m = g.posed(1.0);
        let mut counts = [0f64; 16];
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_matches(&g.flat, &m, &intrinsics(), 100, 0.5, &mut rng).unwrap();
            for (q, ok) in s.matches.image_points().iter().zip(&s.labels.is_correct) {
                if !ok {
                    let cell =
                        ((q.x / 160.0) as usize).min(3) + 4 * ((q.y / 120.0) as usize).min(3);
                    counts[cell] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        let expected = total / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new(15.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }
}
