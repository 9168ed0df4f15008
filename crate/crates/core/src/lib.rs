//! Monocular 3D shape tracking of isometrically deforming surfaces.
//!
//! The crate is organised along the tracking pipeline:
//!
//! * [`mesh`] and [`triangulation`]: meshes, Delaunay neighbourhoods and
//!   barycentric transfer.
//! * [`warp`]: tensor-product bicubic B-spline warps between texturemap and
//!   image space.
//! * [`mismatch`]: neighbourhood-based mismatch removal.
//! * [`sft`]: particle-based isometric shape inference from sightlines.
//! * [`bench`]: seeded synthetic scenes with exact ground truth and the
//!   metrics used to evaluate the other stages.
//! * [`pipeline`]: templates, per-frame orchestration and match sources.

pub mod bench;
pub mod error;
pub mod mesh;
pub mod mismatch;
pub mod pipeline;
pub mod sft;
pub mod triangulation;
pub mod warp;

pub use error::GeometryError;
pub use mesh::{Mesh2D, Mesh3D};
pub use triangulation::{delaunay, Triangulation};
