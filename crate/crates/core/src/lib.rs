//! Invariant extended Kalman filter for legged robots.
//!
//! The filter fuses an IMU with two velocity sources: the contact-point
//! constraint from leg kinematics (a right-invariant observation on SE₂(3))
//! and a tracking camera reporting its own velocity and rotation rate. The
//! camera mounting pose is part of the state and is calibrated online, and
//! the camera noise covariance is re-estimated from a short window of recent
//! samples. Kinematic updates pass a Mahalanobis gate so that slipping
//! contacts are rejected while the camera keeps the velocity estimate honest.
//!
//! Alongside the filter the crate ships a deterministic biped-like simulator
//! and numerical observability tools used to check the filter's properties.
//!
//! Module map:
//!
//! - [`lie`]: SO(3)/SE₂(3) exponential, logarithm and adjoint
//! - [`state`]: robot state, 21-dim error layout, noise and filter settings
//! - [`kinematics`]: contact-velocity observation and a toy 3-joint leg
//! - [`inekf`]: propagation, updates, noise tuning and the event driver
//! - [`observability`]: Lie-derivative and discrete observability matrices
//! - [`sim`]: truth trajectories, sensor synthesis and scoring

pub mod error;
pub mod inekf;
pub mod kinematics;
pub mod lie;
pub mod linalg;
pub mod observability;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
pub use inekf::{CameraVelocitySample, Event, FilterInstance, ImuSample, UpdateOutcome};
pub use kinematics::{ContactKinematicSample, KinematicObservation, LegModel, ToyLeg};
pub use lie::{Rotation, Se23};
pub use state::{ErrorState, FilterConfig, NoiseConfig, RobotState};
