//! Error types for every stage of the pipeline.

use std::fmt;

use thiserror::Error;

use crate::sft::ShapeEstimate;

/// Failures of the geometric substrate (meshes, triangulation, barycentric transfer).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("triangle {triangle} has near-zero area ({area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WarpError {
    #[error("regularized normal equations are numerically singular")]
    SingularSystem,
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
}

/// Stage of the mismatch removal algorithm that rejected its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchStep {
    NeighborFactor,
    Selection,
    Purification,
    Classification,
}

impl fmt::Display for MismatchStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MismatchStep::NeighborFactor => "mismatch factor",
            MismatchStep::Selection => "step I (selection)",
            MismatchStep::Purification => "step II (purification)",
            MismatchStep::Classification => "step III (classification)",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MismatchError {
    #[error("insufficient matches at {step}: {available} available, {required} required")]
    InsufficientMatches {
        step: MismatchStep,
        available: usize,
        required: usize,
    },
    #[error("{step}: {source}")]
    Geometry {
        step: MismatchStep,
        #[source]
        source: GeometryError,
    },
    #[error("invalid match set: {0}")]
    InvalidMatches(String),
}

impl MismatchError {
    pub fn step(&self) -> Option<MismatchStep> {
        match self {
            MismatchError::InsufficientMatches { step, .. }
            | MismatchError::Geometry { step, .. } => Some(*step),
            MismatchError::InvalidMatches(_) => None,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum SftError {
    #[error("edge ({a}, {b}) collapsed to zero length")]
    CollapsedEdge { a: usize, b: usize },
    #[error("shape is under-constrained: {0}")]
    UnderConstrained(String),
    #[error(
        "no convergence after {} outer iterations (displacement {:e} m)",
        .estimate.outer_iterations,
        .estimate.final_displacement
    )]
    NoConvergence { estimate: Box<ShapeEstimate> },
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// File parsing and IO failures, carrying the offending location.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
}

impl IoError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl fmt::Display) -> Self {
        IoError::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(
        "deformation did not reach isometry (max edge error {max_error:.4}% after {sweeps} sweeps)"
    )]
    NoConvergence { max_error: f64, sweeps: usize },
    #[error("trial {trial} (seed {seed}): {message}")]
    Trial {
        trial: usize,
        seed: u64,
        message: String,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sft(#[from] SftError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
