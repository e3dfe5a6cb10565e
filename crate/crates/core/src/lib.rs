//! Model-free thermal prediction for robot joint motors.
//!
//! The crate learns the mapping from joint torque time series to motor
//! temperatures with a hybrid recurrent network (one LSTM layer feeding a
//! stack of dense layers), and ships everything around that model:
//!
//! * [`plant`] — a synthetic first-order thermal plant that generates
//!   ground-truth torque/temperature trajectories,
//! * [`dataset`] — CSV telemetry ingestion, feature selection, z-score
//!   normalization and sequence windowing,
//! * [`gauss2`] — a two-term Gaussian profile model fitted by
//!   Levenberg-Marquardt, used as a per-profile curve-fit baseline,
//! * [`network`] — the LSTM + dense forward pass and exact
//!   backpropagation through time,
//! * [`training`] — MSE loss, Adam, the training loop and a
//!   finite-difference gradient checking harness,
//! * [`evaluation`] — RMSE / max-absolute-error reports and
//!   prediction-vs-truth artifacts (CSV and SVG),
//! * [`verify`] — self-check suites wired into the CLI `verify` command.
//!
//! All randomness is drawn from seeded ChaCha streams; every pipeline stage
//! is a deterministic function of its inputs and seeds.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gauss2;
pub mod mat;
pub mod network;
pub mod plant;
pub mod plot;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use mat::Mat;

/// Number of joints of the reference manipulator.
pub const JOINT_COUNT: usize = 7;
