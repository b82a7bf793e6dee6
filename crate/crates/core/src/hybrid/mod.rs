//! Event-driven hybrid dynamical systems: definitions, integration with
//! guard-crossing detection and reset application, flow Jacobians, and
//! saltation matrices.

mod events;
mod integrate;
mod system;
mod trajectory;

pub use events::{locate_event, CrossingPolicy};
pub use integrate::{
    flow_jacobian, flow_jacobian_unchecked, rk4_step, simulate, step, StepOutcome,
};
pub use system::{saltation, HybridState, HybridSystemDef, ModeId, TransitionSpec};
pub use trajectory::{EventRecord, HybridTrajectory};

/// Guard tolerance used for event location and on-guard classification,
/// in guard units.
pub const TOL_G: f64 = 1e-10;

/// Transversality threshold on the guard rate |Dt g + Dx g . F|, below which
/// the saltation matrix is considered undefined.
pub const EPS_TRANS: f64 = 1e-8;

/// Maximum number of bisection iterations when refining an event time.
pub const MAX_BISECTIONS: usize = 80;
