use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HybridError, Result};
use crate::hybrid::{HybridSystemDef, ModeId, TransitionSpec};
use crate::models::MeasurementModel;

/// Planar bouncing ball parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallParams {
    /// Coefficient of restitution, in (0, 1).
    pub restitution: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
}

impl Default for BallParams {
    fn default() -> Self {
        Self {
            restitution: 0.8,
            gravity: 9.8,
        }
    }
}

impl BallParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.restitution > 0.0 && self.restitution < 1.0) {
            return Err(HybridError::ParameterError(format!(
                "restitution must be in (0, 1), got {}",
                self.restitution
            )));
        }
        if self.gravity <= 0.0 {
            return Err(HybridError::ParameterError(format!(
                "gravity must be positive, got {}",
                self.gravity
            )));
        }
        Ok(())
    }
}

/// Bouncing ball with state q = [x, y, xdot, ydot]: one flight mode with a
/// self-transition at the ground. Guard g = y (fires on descent through
/// zero), reset flips the vertical velocity scaled by the restitution.
/// Positions are measured, velocities are not.
pub fn make_ball(p: BallParams) -> Result<(HybridSystemDef, MeasurementModel)> {
    p.validate()?;
    let flight = ModeId(0);
    let a_g = p.gravity;
    let e = p.restitution;

    let field = move |_t: f64, x: &DVector<f64>, _u: &DVector<f64>| {
        DVector::from_vec(vec![x[2], x[3], 0.0, -a_g])
    };
    let field_jac = move |_t: f64, _x: &DVector<f64>, _u: &DVector<f64>| {
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 2)] = 1.0;
        j[(1, 3)] = 1.0;
        j
    };

    let transition = TransitionSpec {
        from: flight,
        to: flight,
        guard: Box::new(|_t, x: &DVector<f64>| x[1]),
        guard_gradient: Box::new(|_t, _x| (0.0, DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]))),
        reset: Box::new(move |_t, x: &DVector<f64>| {
            DVector::from_vec(vec![x[0], x[1], x[2], -e * x[3]])
        }),
        reset_jacobian: Box::new(move |_t, _x| {
            let mut dxr = DMatrix::identity(4, 4);
            dxr[(3, 3)] = -e;
            (DVector::zeros(4), dxr)
        }),
    };

    let sys = HybridSystemDef {
        n: 4,
        modes: vec![flight],
        vector_fields: vec![Box::new(field)],
        field_jacobians: vec![Some(Box::new(field_jac))],
        transitions: vec![transition],
    };
    sys.validate()?;
    Ok((sys, MeasurementModel::position_selector(4, 2)))
}

/// Closed-form ballistic flight over an impact-free interval, used as an
/// integrator and event-time oracle.
pub fn analytic_ball_flow(q0: &DVector<f64>, t: f64, p: &BallParams) -> DVector<f64> {
    DVector::from_vec(vec![
        q0[0] + q0[2] * t,
        q0[1] + q0[3] * t - 0.5 * p.gravity * t * t,
        q0[2],
        q0[3] - p.gravity * t,
    ])
}

/// Smallest positive root of y(t) = 0 under ballistic flight from q0, if any.
pub fn ball_impact_time(q0: &DVector<f64>, p: &BallParams) -> Option<f64> {
    // y0 + vy t - g/2 t^2 = 0
    let (y0, vy, g) = (q0[1], q0[3], p.gravity);
    let disc = vy * vy + 2.0 * g * y0;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let roots = [(vy - sqrt_disc) / g, (vy + sqrt_disc) / g];
    roots
        .into_iter()
        .filter(|&r| r > 0.0)
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.min(r)))
        })
}
