//! Hybrid iterative linear-quadratic estimation.
//!
//! An offline smoother over a measurement history: a backward value
//! recursion produces feedback/feedforward gains on the process noise (with
//! saltation-matrix gradients at steps holding hybrid events), and a hybrid
//! forward rollout applies them under a halving line search, re-detecting
//! events and extending the reference across event-time mismatches.

mod backward;
mod forward;
mod problem;
mod solver;

pub use backward::{backward_pass, initial_point_update, GainSchedule, ValueExpansion};
pub use forward::{forward_pass, reference_extension};
pub use problem::{
    init_grad, initial_iterate, rollout, stage_grad, term_grad, CostGradients, EstimationProblem,
    SolverIterate,
};
pub use solver::{solve, GradientMode, IterationLog, SolverConfig, SolverStats};

#[cfg(test)]
pub(crate) mod tests_support {
    use nalgebra::{DMatrix, DVector};

    use crate::hilqe::problem::EstimationProblem;
    use crate::hybrid::{HybridSystemDef, ModeId};
    use crate::models::MeasurementModel;

    /// Owns the pieces of the one-dimensional single-measurement test
    /// problem: identity dynamics x_{i+1} = x_i + w_i (zero vector field),
    /// identity measurement, unit weights, prior 0, measurement y_1 = 1.
    /// Closed-form optimum: x = [1/3, 2/3], w = [1/3], J = 1/6.
    pub struct ScalarChainFixture {
        pub sys: HybridSystemDef,
        pub meas: MeasurementModel,
    }

    impl ScalarChainFixture {
        pub fn problem(&self) -> EstimationProblem<'_> {
            EstimationProblem::new(
                &self.sys,
                &self.meas,
                vec![DVector::from_vec(vec![1.0])],
                None,
                1.0,
                DMatrix::identity(1, 1),
                DMatrix::identity(1, 1),
                DMatrix::identity(1, 1),
                DVector::zeros(1),
                ModeId(0),
            )
            .unwrap()
        }
    }

    pub fn scalar_chain() -> ScalarChainFixture {
        let sys = HybridSystemDef {
            n: 1,
            modes: vec![ModeId(0)],
            vector_fields: vec![Box::new(|_t, _x: &DVector<f64>, _u: &DVector<f64>| {
                DVector::zeros(1)
            })],
            field_jacobians: vec![Some(Box::new(
                |_t, _x: &DVector<f64>, _u: &DVector<f64>| DMatrix::zeros(1, 1),
            ))],
            transitions: vec![],
        };
        ScalarChainFixture {
            sys,
            meas: MeasurementModel::position_selector(1, 1),
        }
    }
}
