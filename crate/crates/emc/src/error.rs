use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("{quantity} out of domain: {value}")]
    Domain { quantity: &'static str, value: f64 },
    #[error("invalid group grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("regions overlap or leave a gap near x = {0}")]
    Tiling(f64),
    #[error("opacity out of domain: {0}")]
    Opacity(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("particle left the mesh without crossing a boundary (cell {cell}, position {position:?})")]
    Escaped { cell: usize, position: [f64; 2] },
    #[error("particle exceeded {0} tracking events")]
    Runaway(usize),
    #[error("negative source temperature {value} in cell {cell}")]
    NegativeTemperature { cell: usize, value: f64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    Linear { iterations: usize, residual: f64 },
    #[error("Newton correction failed in cell {cell} (residual {residual:e})")]
    Newton { cell: usize, residual: f64 },
    #[error(
        "Picard iteration did not converge in {iterations} iterations (last L1 increment {increment:e})"
    )]
    Picard { iterations: usize, increment: f64 },
    #[error("diffusion Newton did not converge in {iterations} iterations (last increment {increment:e})")]
    Diffusion { iterations: usize, increment: f64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Transport { step: usize, source: TransportError },
    #[error("step {step}: {source}")]
    Solver { step: usize, source: SolverError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
}

impl Error {
    /// Process exit code: 1 for configuration problems, 2 for everything
    /// raised while solving or writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
