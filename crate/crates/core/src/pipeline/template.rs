//! The offline template: rest mesh, its placement in the texturemap, camera
//! intrinsics and the pose used to start the first shape inference.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bench::RestGrid;
use crate::error::{IoError, PipelineError};
use crate::mesh::io::{json_error, read_mesh2d, read_mesh3d, write_mesh2d, write_mesh3d};
use crate::mesh::{grid_topology, Mesh2D, Mesh3D};
use crate::sft::CameraIntrinsics;

/// Depth of the initial pose in front of the camera (m).
pub const INITIAL_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    rest_mesh: Mesh3D,
    mesh2d: Mesh2D,
    texture_size: [u32; 2],
    intrinsics: CameraIntrinsics,
    initial_pose: Mesh3D,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    rest_vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    texture_vertices: Vec<[f64; 2]>,
    texture_size: [u32; 2],
    intrinsics: CameraIntrinsics,
    initial_pose: Vec<[f64; 3]>,
}

impl Template {
    /// Checks that the meshes share topology and `mesh2d` lies inside the
    /// texturemap.
    pub fn new(
        rest_mesh: Mesh3D,
        mesh2d: Mesh2D,
        texture_size: [u32; 2],
        intrinsics: CameraIntrinsics,
        initial_pose: Mesh3D,
    ) -> Result<Self, PipelineError> {
        if rest_mesh.triangles() != mesh2d.triangles()
            || rest_mesh.vertex_count() != mesh2d.vertex_count()
        {
            return Err(PipelineError::TopologyMismatch(format!(
                "3D mesh has {} vertices / {} triangles, 2D mesh has {} / {}",
                rest_mesh.vertex_count(),
                rest_mesh.triangles().len(),
                mesh2d.vertex_count(),
                mesh2d.triangles().len()
            )));
        }
        if initial_pose.triangles() != rest_mesh.triangles()
            || initial_pose.edges() != rest_mesh.edges()
        {
            return Err(PipelineError::TopologyMismatch(
                "initial pose is not a deformed copy of the rest mesh".into(),
            ));
        }
        if texture_size[0] == 0 || texture_size[1] == 0 {
            return Err(PipelineError::InvalidDimensions(
                "texturemap size must be positive".into(),
            ));
        }
        let (w, h) = (f64::from(texture_size[0]), f64::from(texture_size[1]));
        if let Some(i) = mesh2d
            .vertices()
            .iter()
            .position(|p| !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y))
        {
            return Err(PipelineError::InvalidDimensions(format!(
                "2D vertex {i} lies outside the {}x{} texturemap",
                texture_size[0], texture_size[1]
            )));
        }
        intrinsics
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            rest_mesh,
            mesh2d,
            texture_size,
            intrinsics,
            initial_pose,
        })
    }

    /// Template of a synthetic sheet; the initial pose sits at `depth`.
    pub fn from_rest_grid(
        grid: &RestGrid,
        intrinsics: CameraIntrinsics,
        depth: f64,
    ) -> Result<Self, PipelineError> {
        let (_, max) = grid.flat.bounds();
        let size = [max.x.ceil() as u32, max.y.ceil() as u32];
        Self::new(
            grid.rest.clone(),
            grid.flat.clone(),
            size,
            intrinsics,
            grid.posed(depth),
        )
    }

    pub fn rest_mesh(&self) -> &Mesh3D {
        &self.rest_mesh
    }

    pub fn mesh2d(&self) -> &Mesh2D {
        &self.mesh2d
    }

    pub fn texture_size(&self) -> [u32; 2] {
        self.texture_size
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn initial_pose(&self) -> &Mesh3D {
        &self.initial_pose
    }

    pub fn to_json(&self) -> String {
        let file = TemplateFile {
            rest_vertices: self
                .rest_mesh
                .vertices()
                .iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
            triangles: self.rest_mesh.triangles().to_vec(),
            texture_vertices: self.mesh2d.vertices().iter().map(|p| [p.x, p.y]).collect(),
            texture_size: self.texture_size,
            intrinsics: self.intrinsics,
            initial_pose: self
                .initial_pose
                .vertices()
                .iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("template serialization is infallible")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, PipelineError> {
        let file: TemplateFile = serde_json::from_str(text).map_err(|e| json_error(origin, &e))?;
        let invalid = |e: crate::error::GeometryError| IoError::parse(origin, e);
        let p3 = |v: &[[f64; 3]]| {
            v.iter()
                .map(|&[x, y, z]| Point3::new(x, y, z))
                .collect::<Vec<_>>()
        };
        let rest = Mesh3D::new(p3(&file.rest_vertices), file.triangles.clone()).map_err(invalid)?;
        let flat = Mesh2D::new(
            file.texture_vertices
                .iter()
                .map(|&[x, y]| Point2::new(x, y))
                .collect(),
            file.triangles,
        )
        .map_err(invalid)?;
        let pose = rest
            .with_positions(p3(&file.initial_pose))
            .map_err(invalid)?;
        Self::new(rest, flat, file.texture_size, file.intrinsics, pose)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| IoError::io(path, e))?;
        Ok(())
    }

    /// Writes `mesh3d.<ext>`, `mesh2d.json` and `intrinsics.json` into `dir`,
    /// the inputs of [`import_template`]. `obj` selects OBJ for the 3D mesh.
    pub fn export(
        &self,
        dir: impl AsRef<Path>,
        obj: bool,
    ) -> Result<[std::path::PathBuf; 3], PipelineError> {
        let dir = dir.as_ref();
        let paths = [
            dir.join(if obj { "mesh3d.obj" } else { "mesh3d.json" }),
            dir.join("mesh2d.json"),
            dir.join("intrinsics.json"),
        ];
        write_mesh3d(&paths[0], &self.rest_mesh)?;
        write_mesh2d(&paths[1], &self.mesh2d)?;
        self.intrinsics.save(&paths[2])?;
        Ok(paths)
    }
}

/// Planar `width` x `height` (m) sheet meshed with `rows` x `cols` vertices,
/// laid over the whole texturemap, with the initial pose fronto-parallel and
/// centred on the optical axis at [`INITIAL_DEPTH`].
pub fn build_template(
    width: f64,
    height: f64,
    rows: usize,
    cols: usize,
    texture_size: [u32; 2],
    intrinsics: CameraIntrinsics,
) -> Result<Template, PipelineError> {
    if !(width > 0.0 && width.is_finite() && height > 0.0 && height.is_finite()) {
        return Err(PipelineError::InvalidDimensions(format!(
            "sheet size must be positive, got {width} x {height} m"
        )));
    }
    if rows < 2 || cols < 2 {
        return Err(PipelineError::InvalidDimensions(format!(
            "mesh needs at least 2 rows and 2 columns, got {rows} x {cols}"
        )));
    }
    if texture_size[0] == 0 || texture_size[1] == 0 {
        return Err(PipelineError::InvalidDimensions(
            "texturemap size must be positive".into(),
        ));
    }
    let (tw, th) = (f64::from(texture_size[0]), f64::from(texture_size[1]));
    let mut v3 = Vec::with_capacity(rows * cols);
    let mut v2 = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (u, v) = (c as f64 / (cols - 1) as f64, r as f64 / (rows - 1) as f64);
            v3.push(Point3::new((u - 0.5) * width, (v - 0.5) * height, 0.0));
            v2.push(Point2::new(u * tw, v * th));
        }
    }
    let tris = grid_topology(rows, cols);
    let rest = Mesh3D::new(v3, tris.clone())?;
    let flat = Mesh2D::new(v2, tris)?;
    let pose = centred_pose(&rest)?;
    Template::new(rest, flat, texture_size, intrinsics, pose)
}

/// Reads a user-prepared template. The texturemap size defaults to the
/// smallest integer rectangle holding the 2D mesh.
pub fn import_template(
    mesh3d: impl AsRef<Path>,
    mesh2d: impl AsRef<Path>,
    intrinsics: impl AsRef<Path>,
    texture_size: Option<[u32; 2]>,
) -> Result<Template, PipelineError> {
    let rest = read_mesh3d(mesh3d)?;
    let flat = read_mesh2d(mesh2d)?;
    let intrinsics = CameraIntrinsics::load(intrinsics)?;
    let size = texture_size.unwrap_or_else(|| {
        let (_, max) = flat.bounds();
        [max.x.ceil().max(1.0) as u32, max.y.ceil().max(1.0) as u32]
    });
    if rest.triangles() != flat.triangles() || rest.vertex_count() != flat.vertex_count() {
        return Err(PipelineError::TopologyMismatch(format!(
            "3D mesh has {} vertices / {} triangles, 2D mesh has {} / {}",
            rest.vertex_count(),
            rest.triangles().len(),
            flat.vertex_count(),
            flat.triangles().len()
        )));
    }
    let pose = centred_pose(&rest)?;
    Template::new(rest, flat, size, intrinsics, pose)
}

/// The rest mesh translated so its centroid sits on the optical axis at
/// [`INITIAL_DEPTH`].
fn centred_pose(rest: &Mesh3D) -> Result<Mesh3D, PipelineError> {
    let n = rest.vertex_count() as f64;
    let centroid = rest
        .vertices()
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords)
        / n;
    let shift = Vector3::new(0.0, 0.0, INITIAL_DEPTH) - centroid;
    Ok(rest.with_positions(rest.vertices().iter().map(|p| p + shift).collect())?)
}
