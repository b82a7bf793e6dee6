use thiserror::Error;

use crate::hybrid::ModeId;

/// Errors raised by hybrid integration, the estimators, and the harness.
#[derive(Debug, Error)]
pub enum HybridError {
    /// The guard is not transverse to the flow at the crossing point, so the
    /// saltation matrix denominator is below the transversality threshold.
    #[error("tangential guard crossing: |Dt g + Dx g . F| = {rate:.3e} <= {threshold:.3e} for transition {from}->{to}")]
    TangentialCrossing {
        from: ModeId,
        to: ModeId,
        rate: f64,
        threshold: f64,
    },

    /// Two guards cross within the guard tolerance of the same instant.
    #[error("multiple simultaneous guard crossings in mode {mode} near t = {t}")]
    MultipleSimultaneousCrossings { mode: ModeId, t: f64 },

    /// The post-reset continuation crossed another guard before the end of
    /// the discrete timestep.
    #[error("second guard crossing within one step starting at t = {t0} (dt = {dt})")]
    SecondEventInStep { t0: f64, dt: f64 },

    /// A guard crossing was detected while evaluating a flow Jacobian that
    /// assumed an event-free interval.
    #[error("guard crossing inside flow-Jacobian interval [{t0}, {t1}]")]
    EventInsideStep { t0: f64, t1: f64 },

    /// Simulation failed at a specific step.
    #[error("simulation failed at step {step}: {source}")]
    SimulationStep {
        step: usize,
        #[source]
        source: Box<HybridError>,
    },

    /// Q_ww could not be made positive definite within the regularization
    /// budget during the backward pass.
    #[error("Q_ww not positive definite at step {step} after regularization up to mu = {mu_max:.3e}")]
    NonPositiveQww { step: usize, mu_max: f64 },

    /// The value Hessian at the initial point is singular beyond repair.
    #[error("singular value Hessian in initial point update")]
    SingularValueHessian,

    /// Mode mismatch without a bracketing hybrid event in either trajectory.
    #[error("reference extension at step {step}: no bracketing event found")]
    NoEventFound { step: usize },

    /// A forward rollout left the configured state-norm bound.
    #[error("rollout diverged at step {step}: |x| = {norm:.3e} exceeds bound {bound:.3e}")]
    RolloutDiverged { step: usize, norm: f64, bound: f64 },

    /// Innovation covariance in a Kalman update is singular.
    #[error("singular innovation covariance in measurement update")]
    SingularInnovationCovariance,

    /// A weight or covariance matrix failed a positive-definiteness check.
    #[error("matrix '{name}' is not symmetric positive definite")]
    NotPositiveDefinite { name: &'static str },

    /// Invalid model or problem parameters.
    #[error("invalid parameter: {0}")]
    ParameterError(String),

    /// Dimension mismatch between problem pieces.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, HybridError>;
