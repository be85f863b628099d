use thiserror::Error;

/// Crate-wide error type.
///
/// Geometry fields are reported in `f64` regardless of the scalar the caller
/// works in, so the enum stays non-generic.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("target ({x:.6}, {y:.6}) lies outside the reachable annulus [{inner:.6}, {outer:.6}]")]
    Unreachable { x: f64, y: f64, inner: f64, outer: f64 },

    #[error("reference point {index} at ({x:.6}, {y:.6}) lies outside the reachable annulus [{inner:.6}, {outer:.6}]")]
    UnreachablePoint {
        index: usize,
        x: f64,
        y: f64,
        inner: f64,
        outer: f64,
    },

    #[error("bridge point {index} leaves the reachable annulus; increase bridge_len or start nearer the path")]
    BridgeUnreachable { index: usize },

    #[error("regularized Gram matrix is singular; rerun with beta > 0")]
    SingularGram,

    #[error("controller has no trained readout; run training first")]
    NoReadout,

    #[error("plant state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("training episode {episode} diverged on {attempts} consecutive seeds; lower tau_max or dt")]
    TrainingDiverged { episode: usize, attempts: usize },

    #[error("reference series has {have} columns; at least {need} are required")]
    SeriesTooShort { have: usize, need: usize },

    #[error("unsupported controller file: expected magic {expected:?}, found {found:?}")]
    ControllerVersion { expected: String, found: String },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
