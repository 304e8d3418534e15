//! Distributed Kalman filtering over consensus networks.
//!
//! Nodes run a local filter and average quantities with their neighbours for a
//! fixed number of consensus rounds per time step. The crate provides the
//! network and plant models, the classic consensus filters (CM, CI, HCMCI),
//! the modified variants that estimate the fused noise covariance on line,
//! steady-state predictors and a Monte Carlo harness.

pub mod error;
pub mod filters;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod qws;
pub mod riccati;
pub mod rng;
pub mod system;

pub use error::{DkfError, Result};
pub use network::{ConsensusNetwork, SpectralData, TopologyKind};
pub use system::{make_tracking_model, make_tracking_sensors, simulate, PlantModel, SensorSuite, SensorType, Trajectory};
