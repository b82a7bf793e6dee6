//! Offline state estimation for event-driven hybrid dynamical systems.
//!
//! The crate is organized around a small pipeline:
//!
//! - [`hybrid`] defines hybrid systems (modes, guards, resets), integrates
//!   them with guard-crossing detection, and computes flow Jacobians and
//!   saltation matrices at transition events.
//! - [`models`] provides two concrete systems: a planar bouncing ball and an
//!   asymmetric spring-loaded inverted pendulum (ASLIP) hopper, each paired
//!   with a position measurement model.
//! - [`hilqe`] implements hybrid iterative linear-quadratic estimation: an
//!   offline smoother that optimizes process noises over a measurement
//!   history, pushing cost gradients through impact events with the
//!   saltation matrix and extending references across mode mismatches in
//!   the forward rollout.
//! - [`skf`] implements the salted Kalman filter baseline, an EKF whose
//!   covariance is propagated through events by the saltation matrix.
//! - [`harness`] drives seeded Monte-Carlo comparisons of the two
//!   estimators, aggregates error metrics, and exports CSV/SVG artifacts.

pub mod error;
pub mod harness;
pub mod hilqe;
pub mod hybrid;
pub mod models;
pub mod skf;

pub use error::HybridError;
pub use hybrid::{
    EventRecord, HybridState, HybridSystemDef, HybridTrajectory, ModeId, TransitionSpec,
};
