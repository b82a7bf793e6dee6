use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HybridError, Result};
use crate::hybrid::{HybridSystemDef, ModeId, TransitionSpec};
use crate::models::MeasurementModel;

/// ASLIP hopper parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AslipParams {
    /// Body mass, kg.
    pub m_b: f64,
    /// Gravitational acceleration, m/s^2.
    pub a_g: f64,
    /// Hip offset from the center of mass along the body axis, m.
    pub l_b: f64,
    /// Body rotational inertia, kg m^2.
    pub i_b: f64,
    /// Hip torsional spring stiffness, N m/rad.
    pub k_h: f64,
    /// Leg linear spring stiffness, N/m.
    pub k_l: f64,
    /// Leg spring rest length, m.
    pub l_0: f64,
    /// Hip spring rest angle, rad.
    pub phi_0: f64,
}

impl Default for AslipParams {
    fn default() -> Self {
        Self {
            m_b: 1.0,
            a_g: 9.8,
            l_b: 0.5,
            i_b: 1.0,
            k_h: 100.0,
            k_l: 100.0,
            l_0: 1.0,
            phi_0: 0.0,
        }
    }
}

impl AslipParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_b", self.m_b),
            ("i_b", self.i_b),
            ("k_h", self.k_h),
            ("k_l", self.k_l),
            ("l_0", self.l_0),
        ] {
            if v <= 0.0 {
                return Err(HybridError::ParameterError(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub const ASLIP_FLIGHT: ModeId = ModeId(0);
pub const ASLIP_STANCE: ModeId = ModeId(1);

/// Nominal initial state: body at 2.5 m, toe at 1 m, everything else zero.
pub fn aslip_nominal_state() -> DVector<f64> {
    DVector::from_vec(vec![0.0, 2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
}

/// Leg geometry at a state: leg vector from hip to toe, leg length, and the
/// hip angle (world leg angle minus body pitch).
struct LegGeometry {
    vx: f64,
    vy: f64,
    l: f64,
    phi: f64,
}

fn leg_geometry(q: &DVector<f64>, l_b: f64) -> LegGeometry {
    let (s, c) = q[2].sin_cos();
    let vx = q[3] - q[0] - l_b * s;
    let vy = q[4] - q[1] + l_b * c;
    let l = (vx * vx + vy * vy).sqrt();
    // World leg angle measured from straight down: v = l (sin psi, -cos psi).
    let psi = vx.atan2(-vy);
    LegGeometry {
        vx,
        vy,
        l,
        phi: psi - q[2],
    }
}

/// Leg length from toe and hip positions, as used by the liftoff guard.
pub fn aslip_leg_length(q: &DVector<f64>, p: &AslipParams) -> f64 {
    leg_geometry(q, p.l_b).l
}

/// Total mechanical energy in stance: body kinetic plus gravity and both
/// spring potentials. Conserved while the toe stays pinned.
pub fn aslip_stance_energy(q: &DVector<f64>, p: &AslipParams) -> f64 {
    let g = leg_geometry(q, p.l_b);
    let dl = g.l - p.l_0;
    let dphi = g.phi - p.phi_0;
    0.5 * p.m_b * (q[5] * q[5] + q[6] * q[6])
        + 0.5 * p.i_b * q[7] * q[7]
        + p.m_b * p.a_g * q[1]
        + 0.5 * p.k_l * dl * dl
        + 0.5 * p.k_h * dphi * dphi
}

/// Body mechanical energy in flight (the leg carries no energy there).
pub fn aslip_flight_energy(q: &DVector<f64>, p: &AslipParams) -> f64 {
    0.5 * p.m_b * (q[5] * q[5] + q[6] * q[6]) + 0.5 * p.i_b * q[7] * q[7] + p.m_b * p.a_g * q[1]
}

fn flight_field(p: &AslipParams, q: &DVector<f64>) -> DVector<f64> {
    let (s, c) = q[2].sin_cos();
    // Toe slaved to the hip: fixed leg length and world leg angle in flight.
    DVector::from_vec(vec![
        q[5],
        q[6],
        q[7],
        q[5] + p.l_b * c * q[7],
        q[6] + p.l_b * s * q[7],
        0.0,
        -p.a_g,
        0.0,
    ])
}

fn flight_jacobian(p: &AslipParams, q: &DVector<f64>) -> DMatrix<f64> {
    let (s, c) = q[2].sin_cos();
    let mut j = DMatrix::zeros(8, 8);
    j[(0, 5)] = 1.0;
    j[(1, 6)] = 1.0;
    j[(2, 7)] = 1.0;
    j[(3, 2)] = -p.l_b * s * q[7];
    j[(3, 5)] = 1.0;
    j[(3, 7)] = p.l_b * c;
    j[(4, 2)] = p.l_b * c * q[7];
    j[(4, 6)] = 1.0;
    j[(4, 7)] = p.l_b * s;
    j
}

fn stance_field(p: &AslipParams, q: &DVector<f64>) -> DVector<f64> {
    let (s, c) = q[2].sin_cos();
    let g = leg_geometry(q, p.l_b);
    let (vx, vy, l) = (g.vx, g.vy, g.l);
    let l2 = l * l;
    let dl = l - p.l_0;
    let dphi = g.phi - p.phi_0;

    let f_leg = p.k_l * dl;
    let f_hip = p.k_h * dphi;

    let a_x = (f_leg * vx / l - f_hip * vy / l2) / p.m_b;
    let a_y = -p.a_g + (f_leg * vy / l + f_hip * vx / l2) / p.m_b;
    let a_th = (f_leg * p.l_b * (vx * c + vy * s) / l
        - f_hip * (p.l_b * (vy * c - vx * s) / l2 - 1.0))
        / p.i_b;

    DVector::from_vec(vec![q[5], q[6], q[7], 0.0, 0.0, a_x, a_y, a_th])
}

/// Analytic Jacobian of the stance field. Accelerations depend only on the
/// five position entries; the toe rows are zero because the toe is pinned.
fn stance_jacobian(p: &AslipParams, q: &DVector<f64>) -> DMatrix<f64> {
    let (s, c) = q[2].sin_cos();
    let g = leg_geometry(q, p.l_b);
    let (vx, vy, l) = (g.vx, g.vy, g.l);
    let (l2, l3) = (l * l, l * l * l);
    let dl = l - p.l_0;
    let dphi = g.phi - p.phi_0;

    let mut j = DMatrix::zeros(8, 8);
    j[(0, 5)] = 1.0;
    j[(1, 6)] = 1.0;
    j[(2, 7)] = 1.0;

    // Leg-axis projection terms entering the pitch dynamics.
    let g1 = (vx * c + vy * s) / l;
    let g2 = p.l_b * (vy * c - vx * s) / l2 - 1.0;

    // Partials of the leg vector with respect to [x_b, y_b, theta, x_t, y_t].
    let dv = [
        (-1.0, 0.0),
        (0.0, -1.0),
        (-p.l_b * c, -p.l_b * s),
        (1.0, 0.0),
        (0.0, 1.0),
    ];

    for (col, &(dvx, dvy)) in dv.iter().enumerate() {
        let is_theta = col == 2;
        let dl_d = (vx * dvx + vy * dvy) / l;
        let dpsi = (-vy * dvx + vx * dvy) / l2;
        let dphi_d = if is_theta { dpsi - 1.0 } else { dpsi };

        let da_x = (p.k_l * (dl_d * vx / l + dl * dvx / l - dl * vx * dl_d / l2)
            - p.k_h * (dphi_d * vy / l2 + dphi * dvy / l2 - 2.0 * dphi * vy * dl_d / l3))
            / p.m_b;
        let da_y = (p.k_l * (dl_d * vy / l + dl * dvy / l - dl * vy * dl_d / l2)
            + p.k_h * (dphi_d * vx / l2 + dphi * dvx / l2 - 2.0 * dphi * vx * dl_d / l3))
            / p.m_b;

        // d/dq of g1 and g2; the theta column picks up the rotation of the
        // body axis as well.
        let mut num1 = dvx * c + dvy * s;
        if is_theta {
            num1 += -vx * s + vy * c;
        }
        let dg1 = num1 / l - (vx * c + vy * s) * dl_d / l2;
        let mut num2 = dvy * c - dvx * s;
        if is_theta {
            num2 += -vy * s - vx * c;
        }
        let dg2 = p.l_b * (num2 / l2 - 2.0 * (vy * c - vx * s) * dl_d / l3);

        let da_th = (p.k_l * p.l_b * (dl_d * g1 + dl * dg1)
            - p.k_h * (dphi_d * g2 + dphi * dg2))
            / p.i_b;

        j[(5, col)] = da_x;
        j[(6, col)] = da_y;
        j[(7, col)] = da_th;
    }
    j
}

/// ASLIP hopper with state q = [x_b, y_b, theta_b, x_t, y_t, xdot_b, ydot_b,
/// thetadot_b] and two modes:
///
/// - flight: ballistic body dynamics; the toe is slaved to the hip so the
///   leg keeps its length and world angle from the moment of liftoff;
/// - stance: Lagrangian dynamics about the pinned toe with a linear leg
///   spring (rest length l_0) and a torsional hip spring (rest angle phi_0).
///
/// Touchdown fires when the toe height y_t reaches zero; liftoff fires when
/// the leg extends back to its rest length (guard written as l_0 - l_l so
/// that it crosses from positive to non-positive). Both resets are identity
/// on the 8 state entries, so every measured position is continuous through
/// events; the saltation matrices are still non-identity because the vector
/// fields jump. All five positions are measured, no velocities.
pub fn make_aslip(p: AslipParams) -> Result<(HybridSystemDef, MeasurementModel)> {
    p.validate()?;
    let pf = p;
    let pj = p;
    let ps = p;
    let psj = p;
    let pg = p;

    let identity_reset: fn(f64, &DVector<f64>) -> DVector<f64> = |_t, x| x.clone();
    let identity_reset_jac: fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) =
        |_t, _x| (DVector::zeros(8), DMatrix::identity(8, 8));

    let touchdown = TransitionSpec {
        from: ASLIP_FLIGHT,
        to: ASLIP_STANCE,
        guard: Box::new(|_t, x: &DVector<f64>| x[4]),
        guard_gradient: Box::new(|_t, _x| {
            let mut dxg = DVector::zeros(8);
            dxg[4] = 1.0;
            (0.0, dxg)
        }),
        reset: Box::new(identity_reset),
        reset_jacobian: Box::new(identity_reset_jac),
    };

    let liftoff = TransitionSpec {
        from: ASLIP_STANCE,
        to: ASLIP_FLIGHT,
        guard: Box::new(move |_t, x: &DVector<f64>| pg.l_0 - aslip_leg_length(x, &pg)),
        guard_gradient: Box::new(move |_t, x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            let g = leg_geometry(x, pg.l_b);
            let (vx, vy, l) = (g.vx, g.vy, g.l);
            // -d l_l/dq
            let mut dxg = DVector::zeros(8);
            dxg[0] = vx / l;
            dxg[1] = vy / l;
            dxg[2] = pg.l_b * (vx * c + vy * s) / l;
            dxg[3] = -vx / l;
            dxg[4] = -vy / l;
            (0.0, dxg)
        }),
        reset: Box::new(identity_reset),
        reset_jacobian: Box::new(identity_reset_jac),
    };

    let sys = HybridSystemDef {
        n: 8,
        modes: vec![ASLIP_FLIGHT, ASLIP_STANCE],
        vector_fields: vec![
            Box::new(move |_t, x: &DVector<f64>, _u: &DVector<f64>| flight_field(&pf, x)),
            Box::new(move |_t, x: &DVector<f64>, _u: &DVector<f64>| stance_field(&ps, x)),
        ],
        field_jacobians: vec![
            Some(Box::new(move |_t, x: &DVector<f64>, _u: &DVector<f64>| {
                flight_jacobian(&pj, x)
            })),
            Some(Box::new(move |_t, x: &DVector<f64>, _u: &DVector<f64>| {
                stance_jacobian(&psj, x)
            })),
        ],
        transitions: vec![touchdown, liftoff],
    };
    sys.validate()?;
    Ok((sys, MeasurementModel::position_selector(8, 5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{simulate, HybridState};
    use approx::assert_relative_eq;

    fn fd_jacobian(
        f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
        q: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = q.len();
        let f0 = f(q);
        let mut j = DMatrix::zeros(f0.len(), n);
        for col in 0..n {
            let h = 1e-7 * q[col].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[col] += h;
            qm[col] -= h;
            j.set_column(col, &((f(&qp) - f(&qm)) / (2.0 * h)));
        }
        j
    }

    fn generic_state() -> DVector<f64> {
        DVector::from_vec(vec![0.11, 1.02, 0.21, 0.35, 0.13, -0.4, -2.2, 0.3])
    }

    #[test]
    fn nominal_state_touchdown_guard_is_one() {
        let (sys, _) = make_aslip(AslipParams::default()).unwrap();
        let q = aslip_nominal_state();
        assert_eq!((sys.transitions[0].guard)(0.0, &q), 1.0);
    }

    #[test]
    fn defaults_match_parameter_block() {
        let p = AslipParams::default();
        assert_eq!(
            (p.m_b, p.a_g, p.l_b, p.i_b, p.k_h, p.k_l, p.l_0, p.phi_0),
            (1.0, 9.8, 0.5, 1.0, 100.0, 100.0, 1.0, 0.0)
        );
    }

    #[test]
    fn springs_at_rest_give_gravity_only_acceleration() {
        let p = AslipParams::default();
        // Vertical stance: toe at origin, hip at l_0 above it, zero velocity.
        let q = DVector::from_vec(vec![0.0, p.l_0 + p.l_b, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = stance_field(&p, &q);
        assert_relative_eq!(f[5], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f[6], -p.a_g, epsilon = 1e-12);
        assert_relative_eq!(f[7], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compressed_spring_pushes_body_up() {
        let p = AslipParams::default();
        let q = DVector::from_vec(vec![0.0, 1.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = stance_field(&p, &q);
        // l = 0.8, force = k_l * 0.2 = 20 N upward minus gravity.
        assert_relative_eq!(f[6], -9.8 + 20.0, epsilon = 1e-10);
        assert_relative_eq!(f[5], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f[7], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let p = AslipParams::default();
        let q = generic_state();

        let jf = flight_jacobian(&p, &q);
        let jf_fd = fd_jacobian(&|x| flight_field(&p, x), &q);
        assert!((jf - jf_fd).norm() < 1e-6);

        let js = stance_jacobian(&p, &q);
        let js_fd = fd_jacobian(&|x| stance_field(&p, x), &q);
        assert!(
            (js.clone() - js_fd.clone()).norm() < 1e-5,
            "stance jacobian mismatch: {:.3e}",
            (js - js_fd).norm()
        );
    }

    #[test]
    fn liftoff_guard_gradient_matches_finite_differences() {
        let p = AslipParams::default();
        let (sys, _) = make_aslip(p).unwrap();
        let q = generic_state();
        let (_, dxg) = (sys.transitions[1].guard_gradient)(0.0, &q);
        let g = |x: &DVector<f64>| DVector::from_vec(vec![p.l_0 - aslip_leg_length(x, &p)]);
        let fd = fd_jacobian(&|x| g(x), &q);
        for col in 0..8 {
            assert!((dxg[col] - fd[(0, col)]).abs() < 1e-6);
        }
    }

    #[test]
    fn flight_follows_ballistic_arc_with_constant_spin() {
        let p = AslipParams::default();
        let (sys, _) = make_aslip(p).unwrap();
        let mut q = aslip_nominal_state();
        q[5] = 0.3;
        q[7] = 0.1;
        let x0 = HybridState::new(ASLIP_FLIGHT, q.clone(), 0.0);
        let noise = vec![DVector::zeros(8); 200];
        let traj = simulate(&sys, &x0, None, &noise, 1e-3, 200).unwrap();
        assert!(traj.events.is_empty());
        let t = 0.2;
        let last = &traj.samples[200].x;
        assert_relative_eq!(last[0], q[0] + q[5] * t, epsilon = 1e-8);
        assert_relative_eq!(last[1], q[1] + q[6] * t - 0.5 * p.a_g * t * t, epsilon = 1e-8);
        assert_relative_eq!(last[7], q[7], epsilon = 1e-12);
        // Leg length and world angle preserved during flight.
        assert_relative_eq!(aslip_leg_length(last, &p), p.l_0, epsilon = 1e-8);
    }

    #[test]
    fn stance_conserves_energy_at_millisecond_steps() {
        let p = AslipParams::default();
        let (sys, _) = make_aslip(p).unwrap();
        // Start mid-stance, compressed, with some pitch excitation.
        let q = DVector::from_vec(vec![0.02, 1.35, 0.05, 0.0, 0.0, 0.1, -1.5, 0.2]);
        let x0 = HybridState::new(ASLIP_STANCE, q.clone(), 0.0);
        let e0 = aslip_stance_energy(&q, &p);
        let noise = vec![DVector::zeros(8); 150];
        let traj = simulate(&sys, &x0, None, &noise, 1e-3, 150).unwrap();
        for s in &traj.samples {
            if s.mode != ASLIP_STANCE {
                break;
            }
            assert!(
                (aslip_stance_energy(&s.x, &p) - e0).abs() < 1e-6,
                "energy drift at t = {}",
                s.t
            );
        }
    }

    #[test]
    fn nominal_drop_touches_down_and_lifts_off() {
        let p = AslipParams::default();
        let (sys, _) = make_aslip(p).unwrap();
        let x0 = HybridState::new(ASLIP_FLIGHT, aslip_nominal_state(), 0.0);
        let noise = vec![DVector::zeros(8); 1500];
        let traj = simulate(&sys, &x0, None, &noise, 1e-3, 1500).unwrap();
        assert!(traj.events.len() >= 2, "expected touchdown and liftoff");
        let td = &traj.events[0];
        assert_eq!(td.from, ASLIP_FLIGHT);
        assert_eq!(td.to, ASLIP_STANCE);
        // Free fall through 1 m: t = sqrt(2 / 9.8) ~ 0.4518 s.
        assert_relative_eq!(td.t_event, (2.0_f64 / 9.8).sqrt(), epsilon = 1e-6);
        assert!(td.x_minus[4].abs() <= 1e-10);
        let lo = &traj.events[1];
        assert_eq!(lo.from, ASLIP_STANCE);
        assert_eq!(lo.to, ASLIP_FLIGHT);
        // Identity resets: measured positions continuous through both events.
        for ev in &traj.events[..2] {
            for idx in 0..5 {
                assert_eq!(ev.x_minus[idx], ev.x_plus[idx]);
            }
        }
        // Transversality along the nominal trajectory.
        for ev in &traj.events {
            let tr = sys.find_transition(ev.from, ev.to).unwrap();
            let rate = tr.guard_rate(&sys, ev.t_event, &ev.x_minus, &DVector::zeros(0));
            assert!(rate.abs() > 1e-3, "guard rate too small: {rate}");
        }
    }
}
