//! Numerics for gluing charge-one instantons along a codimension-four
//! submanifold: closed-form instanton data, discrete gauge operators on a
//! base-times-fiber grid, the model solver, the balancing system and the
//! fixed-point contraction.

pub mod balancing;
pub mod fields;
pub mod fourier;
pub mod gluing;
pub mod grid;
pub mod instanton;
pub mod lie;
pub mod model_solver;
pub mod ops;
pub mod projection;
pub mod quadrature;
pub mod report;
pub mod solver;
pub mod verify;

pub use instanton::{InstantonParams, KernelCoeffs};
pub use lie::{LieValue, SkewPlus, TwoForm};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("kernel obstruction: {0}")]
    KernelObstruction(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
