use nalgebra::{DMatrix, DVector};

use crate::error::{HybridError, Result};
use crate::hybrid::events::locate_event;
use crate::hybrid::system::{saltation, HybridState, HybridSystemDef, ModeId};
use crate::hybrid::trajectory::{EventRecord, HybridTrajectory};

/// One fixed-size RK4 step of mode I's vector field.
pub fn rk4_step(
    sys: &HybridSystemDef,
    mode: ModeId,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = sys.field(mode, t, x, u);
    let k2 = sys.field(mode, t + 0.5 * h, &(x + 0.5 * h * &k1), u);
    let k3 = sys.field(mode, t + 0.5 * h, &(x + 0.5 * h * &k2), u);
    let k4 = sys.field(mode, t + h, &(x + h * &k3), u);
    x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Result of a single hybrid step.
pub type StepOutcome = (HybridState, Option<EventRecord>);

/// Advance one discrete timestep of length dt with at most one hybrid event.
///
/// The mode dynamics are integrated with a single RK4 substep. If a guard
/// crossing is located, the reset is applied at the refined event time, the
/// saltation matrix is computed at the stored pre-impact state, and
/// integration continues in the new mode to the end of the step. Additive
/// process noise `w` is applied once at the end of the step, after any reset.
///
/// The returned event record carries `step_index = 0`; callers that track a
/// step counter (e.g. [`simulate`]) overwrite it.
pub fn step(
    sys: &HybridSystemDef,
    s: &HybridState,
    u: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
) -> Result<StepOutcome> {
    let t_end = s.t + dt;
    match locate_event(sys, s.mode, s.t, &s.x, u, dt)? {
        None => {
            let x_end = rk4_step(sys, s.mode, s.t, &s.x, u, dt);
            Ok((HybridState::new(s.mode, x_end + w, t_end), None))
        }
        Some(crossing) => {
            let tr = crossing.transition;
            let t_star = crossing.t_star;
            let x_minus = crossing.x_star;
            let salt = saltation(sys, tr, t_star, &x_minus, u)?;
            let x_plus = (tr.reset)(t_star, &x_minus);
            let remainder = t_end - t_star;

            // Non-Zeno check on the continuation in the new mode.
            if let Some(second) = locate_event(sys, tr.to, t_star, &x_plus, u, remainder)? {
                // A post-reset state resting on a guard with inward flow is
                // not a crossing; anything else violates the one-event-per-step
                // assumption at this dt.
                let _ = second;
                return Err(HybridError::SecondEventInStep { t0: s.t, dt });
            }
            let x_end = rk4_step(sys, tr.to, t_star, &x_plus, u, remainder);

            let record = EventRecord {
                step_index: 0,
                from: tr.from,
                to: tr.to,
                t_event: t_star,
                x_minus,
                x_plus,
                salt,
                at_step_start: crossing.at_start,
            };
            Ok((HybridState::new(tr.to, x_end + w, t_end), Some(record)))
        }
    }
}

/// Flow Jacobian A = dx(t0+dt)/dx(t0) of mode I over an event-free interval,
/// plus the process-noise Jacobian B_w = I (additive end-of-step noise).
///
/// Uses variational RK4 when the mode has an analytic field Jacobian and
/// central finite differences on the flow otherwise. Fails with
/// `EventInsideStep` when a guard crossing is detected on the interval.
pub fn flow_jacobian(
    sys: &HybridSystemDef,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if locate_event(sys, mode, t0, x0, u, dt)?.is_some() {
        return Err(HybridError::EventInsideStep { t0, t1: t0 + dt });
    }
    Ok(flow_jacobian_unchecked(sys, mode, t0, x0, u, dt))
}

/// Same as [`flow_jacobian`] but without the event-free check, for callers
/// that manage events themselves (sub-step propagation around a located
/// event, or event-at-end-of-step gradient conventions).
pub fn flow_jacobian_unchecked(
    sys: &HybridSystemDef,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.n;
    let b_w = DMatrix::identity(n, n);
    if dt == 0.0 {
        return (DMatrix::identity(n, n), b_w);
    }
    let a = if sys.has_analytic_jacobian(mode) {
        variational_rk4(sys, mode, t0, x0, u, dt)
    } else {
        fd_flow_jacobian(sys, mode, t0, x0, u, dt)
    };
    (a, b_w)
}

/// Exact Jacobian of the single-substep RK4 map, propagated through the four
/// stages with the analytic field Jacobian.
fn variational_rk4(
    sys: &HybridSystemDef,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = sys.n;
    let eye = DMatrix::<f64>::identity(n, n);

    let k1 = sys.field(mode, t0, x0, u);
    let j1 = sys.field_jacobian(mode, t0, x0, u);

    let x2 = x0 + 0.5 * h * &k1;
    let k2 = sys.field(mode, t0 + 0.5 * h, &x2, u);
    let j2 = sys.field_jacobian(mode, t0 + 0.5 * h, &x2, u) * (&eye + 0.5 * h * &j1);

    let x3 = x0 + 0.5 * h * &k2;
    let k3 = sys.field(mode, t0 + 0.5 * h, &x3, u);
    let j3 = sys.field_jacobian(mode, t0 + 0.5 * h, &x3, u) * (&eye + 0.5 * h * &j2);

    let x4 = x0 + h * &k3;
    let _k4 = sys.field(mode, t0 + h, &x4, u);
    let j4 = sys.field_jacobian(mode, t0 + h, &x4, u) * (&eye + h * &j3);

    &eye + (h / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
}

fn fd_flow_jacobian(
    sys: &HybridSystemDef,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> DMatrix<f64> {
    let n = sys.n;
    let mut a = DMatrix::zeros(n, n);
    for col in 0..n {
        let h = 1e-6 * x0[col].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[col] += h;
        xm[col] -= h;
        let fp = rk4_step(sys, mode, t0, &xp, u, dt);
        let fm = rk4_step(sys, mode, t0, &xm, u, dt);
        a.set_column(col, &((fp - fm) / (2.0 * h)));
    }
    a
}

/// Simulate N steps from x0 with known controls and a prescribed per-step
/// noise sequence, recording every hybrid event. Deterministic in its inputs.
pub fn simulate(
    sys: &HybridSystemDef,
    x0: &HybridState,
    controls: Option<&[DVector<f64>]>,
    noise_seq: &[DVector<f64>],
    dt: f64,
    n_steps: usize,
) -> Result<HybridTrajectory> {
    assert!(
        noise_seq.len() >= n_steps,
        "noise sequence shorter than the requested horizon"
    );
    let zero_u = DVector::zeros(0);
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut events = Vec::new();
    samples.push(x0.clone());

    let mut current = x0.clone();
    for i in 0..n_steps {
        let u = controls.map_or(&zero_u, |c| &c[i]);
        let (mut next, ev) = step(sys, &current, u, &noise_seq[i], dt).map_err(|e| {
            HybridError::SimulationStep {
                step: i,
                source: Box::new(e),
            }
        })?;
        // Keep sample times exactly on the uniform grid.
        next.t = x0.t + ((i + 1) as f64) * dt;
        if let Some(mut record) = ev {
            record.step_index = i;
            events.push(record);
        }
        samples.push(next.clone());
        current = next;
    }

    Ok(HybridTrajectory { samples, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{analytic_ball_flow, make_ball, BallParams};
    use approx::assert_relative_eq;

    const U0: fn() -> DVector<f64> = || DVector::zeros(0);

    fn ball() -> (HybridSystemDef, BallParams) {
        let p = BallParams::default();
        let (sys, _) = make_ball(p).unwrap();
        (sys, p)
    }

    #[test]
    fn smooth_step_matches_closed_form() {
        let (sys, p) = ball();
        let s = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let (next, ev) = step(&sys, &s, &U0(), &DVector::zeros(4), 0.01).unwrap();
        assert!(ev.is_none());
        let expected = analytic_ball_flow(&s.x, 0.01, &p);
        assert_relative_eq!(next.x[0], 0.005, epsilon = 1e-12);
        assert_relative_eq!(next.x[1], 0.94951, epsilon = 1e-12);
        assert_relative_eq!(next.x[3], -5.098, epsilon = 1e-12);
        assert!((next.x - expected).norm() < 1e-10);
    }

    #[test]
    fn event_step_applies_reset_and_continues() {
        let (sys, p) = ball();
        let s = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let (next, ev) = step(&sys, &s, &U0(), &DVector::zeros(4), 0.2).unwrap();
        let ev = ev.expect("event expected in the long step");

        let t_star = crate::models::ball_impact_time(&s.x, &p).unwrap();
        assert!((ev.t_event - t_star).abs() < 1e-9);
        // Reset applied exactly at the stored pre-impact state.
        assert_eq!(ev.x_plus[3], -p.restitution * ev.x_minus[3]);

        // Piecewise closed form: flight to t*, bounce, flight to 0.2 s.
        let pre = analytic_ball_flow(&s.x, t_star, &p);
        let mut post = pre.clone();
        post[3] = -p.restitution * pre[3];
        let expected = analytic_ball_flow(&post, 0.2 - t_star, &p);
        assert!(next.x[1] > 0.0);
        assert!((next.x - expected).norm() < 1e-8);
    }

    #[test]
    fn flow_semigroup_property_without_events() {
        let (sys, _) = ball();
        let s = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let dt = 0.004;
        let (one, _) = step(&sys, &s, &U0(), &DVector::zeros(4), dt).unwrap();
        let (two, _) = step(&sys, &one, &U0(), &DVector::zeros(4), dt).unwrap();
        let (direct, _) = step(&sys, &s, &U0(), &DVector::zeros(4), 2.0 * dt).unwrap();
        assert!((two.x - direct.x).norm() < 1e-12);
    }

    #[test]
    fn ball_flow_jacobian_is_exact_linear_flow() {
        let (sys, _) = ball();
        let x0 = DVector::from_vec(vec![0.3, 0.9, 0.1, -2.0]);
        let dt = 0.01;
        let (a, b_w) = flow_jacobian(&sys, ModeId(0), 0.0, &x0, &U0(), dt).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 2)] = dt;
        expected[(1, 3)] = dt;
        assert!((a - expected).norm() < 1e-14);
        assert!((b_w - DMatrix::identity(4, 4)).norm() == 0.0);
    }

    #[test]
    fn flow_jacobian_zero_dt_is_identity() {
        let (sys, _) = ball();
        let x0 = DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]);
        let (a, b_w) = flow_jacobian(&sys, ModeId(0), 0.0, &x0, &U0(), 0.0).unwrap();
        assert_eq!(a, DMatrix::identity(4, 4));
        assert_eq!(b_w, DMatrix::identity(4, 4));
    }

    #[test]
    fn flow_jacobian_rejects_event_interval() {
        let (sys, _) = ball();
        let x0 = DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]);
        let err = flow_jacobian(&sys, ModeId(0), 0.0, &x0, &U0(), 0.2).unwrap_err();
        assert!(matches!(err, HybridError::EventInsideStep { .. }));
    }

    #[test]
    fn simulate_records_single_impact_near_step_17() {
        let (sys, _) = ball();
        let x0 = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let noise = vec![DVector::zeros(4); 100];
        let traj = simulate(&sys, &x0, None, &noise, 0.01, 100).unwrap();
        assert_eq!(traj.samples.len(), 101);
        assert_eq!(traj.events.len(), 1);
        // t* ~ 0.17126 s falls inside step 17.
        assert_eq!(traj.events[0].step_index, 17);
    }

    #[test]
    fn simulate_zero_steps_returns_initial_sample() {
        let (sys, _) = ball();
        let x0 = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let traj = simulate(&sys, &x0, None, &[], 0.01, 0).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert!(traj.events.is_empty());
    }

    #[test]
    fn simulate_is_deterministic() {
        let (sys, _) = ball();
        let x0 = HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]), 0.0);
        let noise: Vec<DVector<f64>> = (0..50)
            .map(|i| DVector::from_fn(4, |r, _| ((i * 4 + r) as f64 * 0.77).sin() * 0.01))
            .collect();
        let a = simulate(&sys, &x0, None, &noise, 0.01, 50).unwrap();
        let b = simulate(&sys, &x0, None, &noise, 0.01, 50).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.t, sb.t);
        }
    }
}
