use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("degenerate deformation: singular values {smallest:e} / {largest:e}")]
    DegenerateDeformation { smallest: f64, largest: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeighborError {
    #[error("particle {index} has a non-finite position")]
    NonFinitePosition { index: usize },
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("rest neighborhood already captured for group {0}")]
    AlreadyCaptured(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid viscosity model parameters: {}", .0.join("; "))]
pub struct InvalidModelParams(pub Vec<String>);

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scene validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("body {body}: shape admits no lattice points at spacing {spacing}")]
    EmptyBody { body: String, spacing: f64 },
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed frame file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("simulation diverged at t = {time}: {reason} (last good frame {last_good_frame})")]
    Diverged {
        time: f64,
        last_good_frame: u32,
        reason: String,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
}
