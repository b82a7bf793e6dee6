//! Concrete hybrid systems with position measurement models: a planar
//! bouncing ball and an ASLIP hopper.

mod aslip;
mod ball;

pub use aslip::{
    aslip_flight_energy, aslip_leg_length, aslip_nominal_state, aslip_stance_energy, make_aslip,
    AslipParams, ASLIP_FLIGHT, ASLIP_STANCE,
};
pub use ball::{analytic_ball_flow, ball_impact_time, make_ball, BallParams};

use nalgebra::{DMatrix, DVector};

pub type MeasFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MeasJacFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Measurement model y = h(x) + v with Jacobian H = dh/dx. The systems in
/// this crate measure positions only so that h stays continuous through
/// hybrid events.
pub struct MeasurementModel {
    /// Measurement dimension m.
    pub m: usize,
    pub h: MeasFn,
    pub jacobian: MeasJacFn,
}

impl MeasurementModel {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h)(x)
    }

    pub fn jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    /// Selector measurement that picks the first m state entries.
    pub fn position_selector(n: usize, m: usize) -> Self {
        let h_mat = DMatrix::<f64>::identity(m, n);
        let h_eval = h_mat.clone();
        Self {
            m,
            h: Box::new(move |x| &h_eval * x),
            jacobian: Box::new(move |_| h_mat.clone()),
        }
    }
}
