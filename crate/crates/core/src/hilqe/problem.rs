use nalgebra::{DMatrix, DVector};

use crate::error::{HybridError, Result};
use crate::hybrid::{step, EventRecord, HybridState, HybridSystemDef, ModeId};
use crate::models::MeasurementModel;

/// Offline estimation problem over a measurement history: find the initial
/// state and per-step process noises minimizing the weighted sum of the
/// arrival residual, measurement residuals, and noise magnitudes, subject to
/// the hybrid dynamics x_{i+1} = f(x_i, u_i) + w_i.
///
/// The weight matrices are inverse covariances; measurements y_1..y_N attach
/// to states x_1..x_N and w_{i-1} pairs with x_i. There is no measurement at
/// x_0 — the arrival cost plays that role.
pub struct EstimationProblem<'a> {
    pub sys: &'a HybridSystemDef,
    pub meas: &'a MeasurementModel,
    /// Measurements y_1..y_N.
    pub measurements: Vec<DVector<f64>>,
    /// Known inputs per step; `None` means an empty input vector.
    pub controls: Option<Vec<DVector<f64>>>,
    pub dt: f64,
    /// Inverse measurement covariance.
    pub p_v: DMatrix<f64>,
    /// Inverse process covariance.
    pub p_w: DMatrix<f64>,
    /// Inverse arrival covariance.
    pub p_x: DMatrix<f64>,
    /// Prior mean of the initial state.
    pub x0_prior: DVector<f64>,
    pub mode_0: ModeId,
    zero_u: DVector<f64>,
}

impl<'a> EstimationProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: &'a HybridSystemDef,
        meas: &'a MeasurementModel,
        measurements: Vec<DVector<f64>>,
        controls: Option<Vec<DVector<f64>>>,
        dt: f64,
        p_v: DMatrix<f64>,
        p_w: DMatrix<f64>,
        p_x: DMatrix<f64>,
        x0_prior: DVector<f64>,
        mode_0: ModeId,
    ) -> Result<Self> {
        let prob = Self {
            sys,
            meas,
            measurements,
            controls,
            dt,
            p_v,
            p_w,
            p_x,
            x0_prior,
            mode_0,
            zero_u: DVector::zeros(0),
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn n(&self) -> usize {
        self.sys.n
    }

    /// Number of measurements N (the horizon has N steps, N+1 states).
    pub fn horizon(&self) -> usize {
        self.measurements.len()
    }

    /// Measurement attached to state x_i, for 1 <= i <= N.
    pub fn y(&self, i: usize) -> &DVector<f64> {
        &self.measurements[i - 1]
    }

    pub fn u_at(&self, i: usize) -> &DVector<f64> {
        self.controls.as_ref().map_or(&self.zero_u, |c| &c[i])
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        (i as f64) * self.dt
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.meas.m;
        if self.measurements.is_empty() {
            return Err(HybridError::DimensionMismatch(
                "at least one measurement required".into(),
            ));
        }
        for (i, y) in self.measurements.iter().enumerate() {
            if y.len() != m {
                return Err(HybridError::DimensionMismatch(format!(
                    "measurement {i} has dimension {}, expected {m}",
                    y.len()
                )));
            }
        }
        if let Some(c) = &self.controls {
            if c.len() < self.horizon() {
                return Err(HybridError::DimensionMismatch(
                    "control sequence shorter than the horizon".into(),
                ));
            }
        }
        if self.x0_prior.len() != n {
            return Err(HybridError::DimensionMismatch(
                "prior mean dimension != state dimension".into(),
            ));
        }
        for (name, mat, dim) in [
            ("P_v", &self.p_v, m),
            ("P_w", &self.p_w, n),
            ("P_x", &self.p_x, n),
        ] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(HybridError::DimensionMismatch(format!(
                    "{name} must be {dim}x{dim}"
                )));
            }
            if mat.clone().cholesky().is_none() {
                return Err(HybridError::NotPositiveDefinite { name });
            }
        }
        if self.dt <= 0.0 {
            return Err(HybridError::ParameterError("dt must be positive".into()));
        }
        Ok(())
    }

    /// Total estimation cost of a state/noise pair under the weighted
    /// least-squares objective.
    pub fn total_cost(&self, xs: &[DVector<f64>], ws: &[DVector<f64>]) -> f64 {
        let r0 = &xs[0] - &self.x0_prior;
        let mut j = 0.5 * quad(&self.p_x, &r0);
        for i in 1..=self.horizon() {
            let r = self.meas.eval(&xs[i]) - self.y(i);
            j += 0.5 * quad(&self.p_v, &r);
            j += 0.5 * quad(&self.p_w, &ws[i - 1]);
        }
        j
    }

    /// Cost of an arbitrary state sequence (e.g. a filter output) with the
    /// process noises implied by the hybrid dynamics: w_i is whatever residual
    /// the dynamics need to reach x_{i+1} from x_i.
    pub fn cost_of_state_sequence(&self, xs: &[DVector<f64>], modes: &[ModeId]) -> Result<f64> {
        let n_steps = self.horizon();
        let zero = DVector::zeros(self.n());
        let mut ws = Vec::with_capacity(n_steps);
        for i in 0..n_steps {
            let s = HybridState::new(modes[i], xs[i].clone(), self.sample_time(i));
            let (next, _) = step(self.sys, &s, self.u_at(i), &zero, self.dt)?;
            ws.push(&xs[i + 1] - next.x);
        }
        Ok(self.total_cost(xs, &ws))
    }
}

pub(crate) fn quad(p: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (p * v).dot(v)
}

/// Stage cost gradients at one timestep (Gauss-Newton: second derivatives of
/// the measurement map are dropped, which is exact for linear selectors).
/// l_xw is identically zero for the separable cost but carried for
/// generality.
pub struct CostGradients {
    pub l_x: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_w: DVector<f64>,
    pub l_ww: DMatrix<f64>,
    pub l_xw: DMatrix<f64>,
}

/// Gradients of the stage cost at 1 <= i < N: measurement residual at x_i
/// plus the penalty on the noise w_i decided at this step.
pub fn stage_grad(
    prob: &EstimationProblem,
    i: usize,
    x_i: &DVector<f64>,
    w_i: &DVector<f64>,
) -> CostGradients {
    let h = prob.meas.jac(x_i);
    let r = prob.meas.eval(x_i) - prob.y(i);
    let ht_pv = h.transpose() * &prob.p_v;
    CostGradients {
        l_x: &ht_pv * r,
        l_xx: ht_pv * h,
        l_w: &prob.p_w * w_i,
        l_ww: prob.p_w.clone(),
        l_xw: DMatrix::zeros(prob.n(), prob.n()),
    }
}

/// Gradients at the initial step: the arrival cost replaces the measurement
/// residual (there is no measurement at x_0).
pub fn init_grad(
    prob: &EstimationProblem,
    x_0: &DVector<f64>,
    w_0: &DVector<f64>,
) -> CostGradients {
    CostGradients {
        l_x: &prob.p_x * (x_0 - &prob.x0_prior),
        l_xx: prob.p_x.clone(),
        l_w: &prob.p_w * w_0,
        l_ww: prob.p_w.clone(),
        l_xw: DMatrix::zeros(prob.n(), prob.n()),
    }
}

/// Terminal gradients: the measurement residual at x_N with no dynamics
/// coupling.
pub fn term_grad(prob: &EstimationProblem, x_n: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let h = prob.meas.jac(x_n);
    let r = prob.meas.eval(x_n) - prob.y(prob.horizon());
    let ht_pv = h.transpose() * &prob.p_v;
    (&ht_pv * r, ht_pv * h)
}

/// Feasible solver iterate: states are exactly the hybrid rollout of
/// (x_0, W), with the mode sequence, event records, and total cost attached.
#[derive(Debug, Clone)]
pub struct SolverIterate {
    pub xs: Vec<DVector<f64>>,
    pub ws: Vec<DVector<f64>>,
    pub modes: Vec<ModeId>,
    pub events: Vec<EventRecord>,
    pub cost: f64,
}

impl SolverIterate {
    /// Number of events recorded strictly before sample i.
    pub fn epoch_at(&self, i: usize) -> usize {
        self.events.iter().filter(|ev| ev.step_index < i).count()
    }

    pub fn event_at_step(&self, i: usize) -> Option<&EventRecord> {
        self.events.iter().find(|ev| ev.step_index == i)
    }
}

/// Roll the hybrid dynamics out from x_0 with the given noise sequence,
/// producing a feasible iterate. Events and modes are re-detected along the
/// way; sample times sit exactly on the uniform grid.
pub fn rollout(
    prob: &EstimationProblem,
    x0: DVector<f64>,
    ws: Vec<DVector<f64>>,
) -> Result<SolverIterate> {
    let n_steps = prob.horizon();
    assert_eq!(ws.len(), n_steps, "one noise vector per step required");
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut modes = Vec::with_capacity(n_steps + 1);
    let mut events = Vec::new();

    let mut s = HybridState::new(prob.mode_0, x0, 0.0);
    xs.push(s.x.clone());
    modes.push(s.mode);
    for (i, w) in ws.iter().enumerate() {
        let (mut next, ev) = step(prob.sys, &s, prob.u_at(i), w, prob.dt)?;
        next.t = prob.sample_time(i + 1);
        if let Some(mut record) = ev {
            record.step_index = i;
            events.push(record);
        }
        xs.push(next.x.clone());
        modes.push(next.mode);
        s = next;
    }
    let cost = prob.total_cost(&xs, &ws);
    Ok(SolverIterate {
        xs,
        ws,
        modes,
        events,
        cost,
    })
}

/// Default initialization: prior mean, zero noise, rolled out through the
/// hybrid dynamics (feasible by construction).
pub fn initial_iterate(prob: &EstimationProblem) -> Result<SolverIterate> {
    let ws = vec![DVector::zeros(prob.n()); prob.horizon()];
    rollout(prob, prob.x0_prior.clone(), ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilqe::tests_support::scalar_chain;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_chain_costs() {
        let fixture = scalar_chain();
        let prob = fixture.problem();

        // X = [0, 0], W = [0]: only the measurement residual contributes.
        let xs = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.0])];
        let ws = vec![DVector::from_vec(vec![0.0])];
        assert_relative_eq!(prob.total_cost(&xs, &ws), 0.5, epsilon = 1e-15);

        // Optimum X = [1/3, 2/3], W = [1/3]: J = 1/6.
        let xs = vec![
            DVector::from_vec(vec![1.0 / 3.0]),
            DVector::from_vec(vec![2.0 / 3.0]),
        ];
        let ws = vec![DVector::from_vec(vec![1.0 / 3.0])];
        assert_relative_eq!(prob.total_cost(&xs, &ws), 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_residuals_give_zero_cost_and_zero_gradients() {
        let fixture = scalar_chain();
        let mut prob = fixture.problem();
        prob.measurements = vec![DVector::from_vec(vec![0.0])];
        let xs = vec![DVector::zeros(1), DVector::zeros(1)];
        let ws = vec![DVector::zeros(1)];
        assert_eq!(prob.total_cost(&xs, &ws), 0.0);

        let g = stage_grad(&prob, 1, &xs[1], &ws[0]);
        assert_eq!(g.l_x[0], 0.0);
        assert_eq!(g.l_w[0], 0.0);
        assert_eq!(g.l_xx[(0, 0)], 1.0);
        assert_eq!(g.l_ww[(0, 0)], 1.0);
    }

    #[test]
    fn term_grad_differentiates_measurement_residual() {
        let fixture = scalar_chain();
        let prob = fixture.problem();
        // d/dx 0.5 (x - 1)^2 at x = 0 is -1 with curvature 1.
        let (v_x, v_xx) = term_grad(&prob, &DVector::from_vec(vec![0.0]));
        assert_relative_eq!(v_x[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(v_xx[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ball_selector_gradient_embeds_residual() {
        use crate::models::{make_ball, BallParams};
        let (sys, meas) = make_ball(BallParams::default()).unwrap();
        let prob = EstimationProblem::new(
            &sys,
            &meas,
            vec![DVector::from_vec(vec![0.0, 0.0])],
            None,
            0.01,
            DMatrix::identity(2, 2),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DVector::zeros(4),
            ModeId(0),
        )
        .unwrap();
        // Residual [0.1, -0.2] embeds through the selector transpose.
        let x = DVector::from_vec(vec![0.1, -0.2, 7.0, -3.0]);
        let g = stage_grad(&prob, 1, &x, &DVector::zeros(4));
        assert_eq!(
            g.l_x,
            DVector::from_vec(vec![0.1, -0.2, 0.0, 0.0])
        );
    }

    #[test]
    fn rollout_is_feasible_and_costed() {
        let fixture = scalar_chain();
        let prob = fixture.problem();
        let it = initial_iterate(&prob).unwrap();
        assert_eq!(it.xs.len(), 2);
        assert_eq!(it.ws.len(), 1);
        assert_relative_eq!(it.cost, prob.total_cost(&it.xs, &it.ws), epsilon = 1e-15);
        assert_relative_eq!(it.cost, 0.5, epsilon = 1e-12);
    }
}
