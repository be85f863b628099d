//! Model-free tracking control of a two-link planar arm.
//!
//! The crate simulates a torque-driven two-link arm, trains a reservoir
//! computing (echo state network) inverse model from episodes driven by
//! smoothed random torques, and closes the loop to make the arm's end
//! effector follow periodic or chaotic reference trajectories.
//!
//! Everything is generic over the scalar type through [`Float`]; the aliases
//! at the crate root pin `f64`, which is what the command line tool and the
//! acceptance experiments use.

pub mod dynamics;
pub mod error;
pub mod esn;
pub mod float;
pub mod logio;
pub mod seeds;
pub mod signal;
pub mod tracking;
pub mod trajectories;
pub mod training;

pub use error::{Error, Result};
pub use float::Float;

/// Arm parameters in `f64`.
pub type ArmParams64 = dynamics::ArmParams<f64>;
/// Plant state in `f64`.
pub type PlantState64 = dynamics::PlantState<f64>;
/// Reservoir hyperparameters in `f64`.
pub type EsnParams64 = esn::EsnParams<f64>;
/// Trained controller in `f64`.
pub type EsnController64 = esn::EsnController<f64>;
/// Reference path in `f64`.
pub type ReferencePath64 = trajectories::ReferencePath<f64>;
/// Reference series in `f64`.
pub type ReferenceSeries64 = trajectories::ReferenceSeries<f64>;
/// Tracking run result in `f64`.
pub type RunResult64 = tracking::RunResult<f64>;
/// Training configuration in `f64`.
pub type TrainConfig64 = training::TrainConfig<f64>;
/// Tracking configuration in `f64`.
pub type TrackConfig64 = tracking::TrackConfig<f64>;
