//! Tensor-product bicubic B-spline (BBS) warps from texturemap to image space.
//!
//! A warp is two scalar uniform cubic B-spline surfaces (one per output
//! coordinate) over a rectangular domain. Inputs are normalised to the unit
//! square before evaluation; with `n` control points per axis the unit
//! interval is split into `n - 3` uniform knot spans. Points outside the
//! domain are clamped onto it.
//!
//! Fitting minimises the weighted squared residual plus `lambda` times the
//! thin-plate bending energy `∫∫ f_xx² + 2 f_xy² + f_yy²` over the normalised
//! square, by a direct Cholesky solve of the regularised normal equations.
//! Affine maps have zero bending energy and are reproduced exactly.

use std::path::Path;

use nalgebra::{DMatrix, Point2};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, WarpError};
use crate::mesh::Mesh2D;

/// Axis-aligned rectangle in texturemap pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Bounding box of a mesh.
    pub fn bounding(mesh: &Mesh2D) -> Self {
        let (lo, hi) = mesh.bounds();
        Self::new(lo.x, lo.y, hi.x, hi.y)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.width() > 0.0
            && self.height() > 0.0
    }

    /// `p` mapped into `[0, 1]²`, clamped.
    fn normalize(&self, p: &Point2<f64>) -> (f64, f64) {
        (
            ((p.x - self.x_min) / self.width()).clamp(0.0, 1.0),
            ((p.y - self.y_min) / self.height()).clamp(0.0, 1.0),
        )
    }
}

/// Control grid resolution and smoothing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// Control points along x and y; at least 4 each.
    pub grid: [usize; 2],
    pub lambda: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            grid: [8, 8],
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A fitted warp. Coefficients are row-major over the control grid:
/// entry `iy * nu + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbsWarp {
    domain: Rect,
    grid: [usize; 2],
    lambda: f64,
    coefficients: Coefficients,
}

/// Uniform cubic B-spline basis on one knot span, `u ∈ [0, 1]`.
#[inline]
fn basis(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    let u2 = u * u;
    let u3 = u2 * u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

fn basis_d1(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        -v * v / 2.0,
        (3.0 * u * u - 4.0 * u) / 2.0,
        (-3.0 * u * u + 2.0 * u + 1.0) / 2.0,
        u * u / 2.0,
    ]
}

fn basis_d2(u: f64) -> [f64; 4] {
    [1.0 - u, 3.0 * u - 2.0, 1.0 - 3.0 * u, u]
}

/// First control index and local parameter for normalised coordinate `s`.
#[inline]
fn span(s: f64, n: usize) -> (usize, f64) {
    let t = s * (n - 3) as f64;
    let k = (t.floor() as usize).min(n - 4);
    (k, t - k as f64)
}

/// Gram matrix `∫₀¹ φ_a⁽ᵈ⁾ φ_b⁽ᵈ⁾ ds` of the `n` basis functions over the
/// normalised axis, for derivative order `d`.
fn gram(n: usize, d: usize) -> DMatrix<f64> {
    // 4-point Gauss-Legendre is exact for the degree-6 products involved
    const NODES: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const WEIGHTS: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let spans = (n - 3) as f64;
    // d/ds = spans * d/dt and ds = dt / spans
    let scale = spans.powi(2 * d as i32) / spans;
    let mut g = DMatrix::zeros(n, n);
    for k in 0..n - 3 {
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            let u = 0.5 * (x + 1.0);
            let b = match d {
                0 => basis(u),
                1 => basis_d1(u),
                _ => basis_d2(u),
            };
            for i in 0..4 {
                for j in 0..4 {
                    g[(k + i, k + j)] += 0.5 * w * b[i] * b[j] * scale;
                }
            }
        }
    }
    g
}

/// Bending-energy quadratic form over the row-major coefficient vector.
fn bending_matrix(nu: usize, nv: usize) -> DMatrix<f64> {
    let gx = [gram(nu, 0), gram(nu, 1), gram(nu, 2)];
    let gy = [gram(nv, 0), gram(nv, 1), gram(nv, 2)];
    let n = nu * nv;
    DMatrix::from_fn(n, n, |r, c| {
        let (iy, ix) = (r / nu, r % nu);
        let (jy, jx) = (c / nu, c % nu);
        gx[2][(ix, jx)] * gy[0][(iy, jy)]
            + 2.0 * gx[1][(ix, jx)] * gy[1][(iy, jy)]
            + gx[0][(ix, jx)] * gy[2][(iy, jy)]
    })
}

impl BbsWarp {
    /// Warp whose coefficients are given directly.
    pub fn from_coefficients(
        domain: Rect,
        grid: [usize; 2],
        lambda: f64,
        coefficients: Coefficients,
    ) -> Result<Self, WarpError> {
        let w = Self {
            domain,
            grid,
            lambda,
            coefficients,
        };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<(), WarpError> {
        let [nu, nv] = self.grid;
        if nu < 4 || nv < 4 {
            return Err(WarpError::InvalidWarp(format!(
                "control grid must be at least 4x4, got {nu}x{nv}"
            )));
        }
        if !self.domain.is_valid() {
            return Err(WarpError::InvalidWarp(
                "domain must have positive area".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(WarpError::InvalidWarp(
                "lambda must be finite and non-negative".into(),
            ));
        }
        let c = &self.coefficients;
        if c.x.len() != nu * nv || c.y.len() != nu * nv {
            return Err(WarpError::InvalidWarp(format!(
                "expected {} coefficients per axis",
                nu * nv
            )));
        }
        if !c.x.iter().chain(&c.y).all(|v| v.is_finite()) {
            return Err(WarpError::InvalidWarp("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn grid(&self) -> [usize; 2] {
        self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn eval(&self, p: &Point2<f64>) -> Point2<f64> {
        let [nu, nv] = self.grid;
        let (s, r) = self.domain.normalize(p);
        let (kx, ux) = span(s, nu);
        let (ky, uy) = span(r, nv);
        let (bx, by) = (basis(ux), basis(uy));
        let (mut x, mut y) = (0.0, 0.0);
        for (b, wy) in by.iter().enumerate() {
            let row = (ky + b) * nu + kx;
            for (a, wx) in bx.iter().enumerate() {
                let w = wx * wy;
                x += w * self.coefficients.x[row + a];
                y += w * self.coefficients.y[row + a];
            }
        }
        Point2::new(x, y)
    }

    pub fn eval_many(&self, points: &[Point2<f64>]) -> Vec<Point2<f64>> {
        points.iter().map(|p| self.eval(p)).collect()
    }

    /// `Σ_axes cᵀ B c`, the bending energy of the warp over the normalised domain.
    pub fn bending_energy(&self) -> f64 {
        let [nu, nv] = self.grid;
        let b = bending_matrix(nu, nv);
        [&self.coefficients.x, &self.coefficients.y]
            .iter()
            .map(|c| {
                let v = nalgebra::DVector::from_column_slice(c);
                v.dot(&(&b * &v))
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("warp serialization is infallible")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, IoError> {
        let w: Self =
            serde_json::from_str(text).map_err(|e| crate::mesh::io::json_error(origin, &e))?;
        w.validate().map_err(|e| IoError::parse(origin, e))?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| IoError::io(path.as_ref(), e))
    }
}

/// Fits a warp taking `source` (texturemap) points onto `target` (image) points.
pub fn fit_bbs(
    source: &[Point2<f64>],
    target: &[Point2<f64>],
    domain: Rect,
    config: &WarpConfig,
) -> Result<BbsWarp, WarpError> {
    fit_bbs_weighted(source, target, None, domain, config)
}

/// Like [`fit_bbs`] with a non-negative weight per correspondence.
pub fn fit_bbs_weighted(
    source: &[Point2<f64>],
    target: &[Point2<f64>],
    weights: Option<&[f64]>,
    domain: Rect,
    config: &WarpConfig,
) -> Result<BbsWarp, WarpError> {
    let [nu, nv] = config.grid;
    if nu < 4 || nv < 4 {
        return Err(WarpError::InvalidWarp(format!(
            "control grid must be at least 4x4, got {nu}x{nv}"
        )));
    }
    if !domain.is_valid() {
        return Err(WarpError::InvalidWarp(
            "domain must have positive area".into(),
        ));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(WarpError::InvalidWarp(
            "lambda must be finite and non-negative".into(),
        ));
    }
    if source.len() != target.len() || source.is_empty() {
        return Err(WarpError::InvalidWarp(format!(
            "need matching non-empty point lists, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != source.len() || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(WarpError::InvalidWarp(
                "weights must be finite, non-negative, one per point".into(),
            ));
        }
    }
    if source
        .iter()
        .chain(target)
        .any(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(WarpError::InvalidWarp("non-finite point".into()));
    }

    let n = nu * nv;
    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    let mut idx = [0usize; 16];
    let mut val = [0f64; 16];
    for (i, (s, t)) in source.iter().zip(target).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (sx, sy) = domain.normalize(s);
        let (kx, ux) = span(sx, nu);
        let (ky, uy) = span(sy, nv);
        let (bx, by) = (basis(ux), basis(uy));
        for b in 0..4 {
            for a in 0..4 {
                idx[b * 4 + a] = (ky + b) * nu + kx + a;
                val[b * 4 + a] = bx[a] * by[b];
            }
        }
        for p in 0..16 {
            let wp = w * val[p];
            rhs[(idx[p], 0)] += wp * t.x;
            rhs[(idx[p], 1)] += wp * t.y;
            for q in 0..16 {
                normal[(idx[p], idx[q])] += wp * val[q];
            }
        }
    }
    if config.lambda > 0.0 {
        normal += bending_matrix(nu, nv) * config.lambda;
    }

    let chol = normal.cholesky().ok_or(WarpError::SingularSystem)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
        (lo.min(d), hi.max(d))
    });
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
        return Err(WarpError::SingularSystem);
    }
    let sol = chol.solve(&rhs);
    let coefficients = Coefficients {
        x: sol.column(0).iter().copied().collect(),
        y: sol.column(1).iter().copied().collect(),
    };
    if !coefficients
        .x
        .iter()
        .chain(&coefficients.y)
        .all(|v| v.is_finite())
    {
        return Err(WarpError::SingularSystem);
    }
    Ok(BbsWarp {
        domain,
        grid: config.grid,
        lambda: config.lambda,
        coefficients,
    })
}

/// Pushes every vertex of `mesh` through the warp, keeping its topology.
pub fn transfer_mesh(warp: &BbsWarp, mesh: &Mesh2D) -> Mesh2D {
    mesh.with_positions(warp.eval_many(mesh.vertices()))
        .expect("warp output is finite for finite coefficients")
}
