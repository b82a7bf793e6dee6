//! Salted Kalman filter: an extended Kalman filter whose covariance is
//! pushed through hybrid events by the saltation matrix in place of the
//! reset-map Jacobian, with the flow split at the event time.

use nalgebra::{DMatrix, DVector};

use crate::error::{HybridError, Result};
use crate::hilqe::EstimationProblem;
use crate::hybrid::{flow_jacobian_unchecked, step, EventRecord, HybridState};
use crate::models::MeasurementModel;

/// Gaussian belief over the hybrid state. The covariance is re-symmetrized
/// after every propagation and update.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: HybridState,
    pub cov: DMatrix<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&m + m.transpose())
}

/// Propagate the belief over one discrete step. The mean follows the hybrid
/// dynamics with zero noise (switching modes when it crosses a guard). On a
/// smooth step the covariance maps through the flow Jacobian; on an event
/// step it maps through A2 Xi A1: the pre-event flow, the saltation matrix,
/// and the post-event flow. Process noise is added once per step.
pub fn skf_predict(
    prob: &EstimationProblem,
    belief: &GaussianBelief,
    u: &DVector<f64>,
    dt: f64,
    w_cov: &DMatrix<f64>,
) -> Result<(GaussianBelief, Option<EventRecord>)> {
    let zero_w = DVector::zeros(prob.n());
    let (next, ev) = step(prob.sys, &belief.mean, u, &zero_w, dt)?;

    let propagated = match &ev {
        None => {
            let (a, _) = flow_jacobian_unchecked(
                prob.sys,
                belief.mean.mode,
                belief.mean.t,
                &belief.mean.x,
                u,
                dt,
            );
            &a * &belief.cov * a.transpose()
        }
        Some(record) => {
            let (a1, _) = flow_jacobian_unchecked(
                prob.sys,
                record.from,
                belief.mean.t,
                &belief.mean.x,
                u,
                record.t_event - belief.mean.t,
            );
            let (a2, _) = flow_jacobian_unchecked(
                prob.sys,
                record.to,
                record.t_event,
                &record.x_plus,
                u,
                belief.mean.t + dt - record.t_event,
            );
            let m = a2 * &record.salt * a1;
            &m * &belief.cov * m.transpose()
        }
    };

    Ok((
        GaussianBelief {
            mean: next,
            cov: symmetrize(propagated + w_cov),
        },
        ev,
    ))
}

/// Standard EKF measurement correction with a Joseph-form covariance update.
pub fn skf_update(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    meas: &MeasurementModel,
    v_cov: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let h = meas.jac(&belief.mean.x);
    let innovation = y - meas.eval(&belief.mean.x);
    let s = symmetrize(&h * &belief.cov * h.transpose() + v_cov);
    let chol = s
        .cholesky()
        .ok_or(HybridError::SingularInnovationCovariance)?;
    // K = P H^T S^-1, via S K^T = H P.
    let gain = chol.solve(&(&h * &belief.cov)).transpose();

    let mean_x = &belief.mean.x + &gain * innovation;
    let n = belief.cov.nrows();
    let i_kh = DMatrix::<f64>::identity(n, n) - &gain * h;
    let cov = &i_kh * &belief.cov * i_kh.transpose() + &gain * v_cov * gain.transpose();

    Ok(GaussianBelief {
        mean: HybridState::new(belief.mean.mode, mean_x, belief.mean.t),
        cov: symmetrize(cov),
    })
}

/// Full filter output: one belief per sample (including the prior) and the
/// events crossed by the mean during prediction.
pub struct SkfRun {
    pub beliefs: Vec<GaussianBelief>,
    pub events: Vec<EventRecord>,
}

impl SkfRun {
    /// Number of events recorded strictly before sample i.
    pub fn epoch_at(&self, i: usize) -> usize {
        self.events.iter().filter(|ev| ev.step_index < i).count()
    }

    /// Belief means serialized as CSV: t, mode, mean, then optionally the
    /// covariance row-major.
    pub fn to_csv(&self, include_cov: bool) -> String {
        use std::fmt::Write as _;
        let n = self.beliefs.first().map_or(0, |b| b.mean.x.len());
        let mut out = String::from("t,mode");
        for j in 0..n {
            let _ = write!(out, ",mean_{j}");
        }
        if include_cov {
            for r in 0..n {
                for c in 0..n {
                    let _ = write!(out, ",p_{r}_{c}");
                }
            }
        }
        out.push('\n');
        for b in &self.beliefs {
            let _ = write!(out, "{},{}", b.mean.t, b.mean.mode);
            for j in 0..n {
                let _ = write!(out, ",{}", b.mean.x[j]);
            }
            if include_cov {
                for r in 0..n {
                    for c in 0..n {
                        let _ = write!(out, ",{}", b.cov[(r, c)]);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Run the predict-update cycle over all measurements of the problem. The
/// weight matrices in `prob` are inverse covariances; this takes the
/// covariances themselves.
pub fn run_skf(
    prob: &EstimationProblem,
    v_cov: &DMatrix<f64>,
    w_cov: &DMatrix<f64>,
    p_0: &DMatrix<f64>,
) -> Result<SkfRun> {
    let mut belief = GaussianBelief {
        mean: HybridState::new(prob.mode_0, prob.x0_prior.clone(), 0.0),
        cov: p_0.clone(),
    };
    let mut beliefs = Vec::with_capacity(prob.horizon() + 1);
    let mut events = Vec::new();
    beliefs.push(belief.clone());

    for i in 0..prob.horizon() {
        let (mut predicted, ev) = skf_predict(prob, &belief, prob.u_at(i), prob.dt, w_cov)?;
        predicted.mean.t = prob.sample_time(i + 1);
        if let Some(mut record) = ev {
            record.step_index = i;
            events.push(record);
        }
        belief = skf_update(&predicted, prob.y(i + 1), prob.meas, v_cov)?;
        beliefs.push(belief.clone());
    }

    Ok(SkfRun { beliefs, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::ModeId;
    use crate::models::{make_ball, BallParams};
    use approx::assert_relative_eq;

    #[test]
    fn smooth_predict_is_apa_plus_q() {
        let (sys, meas) = make_ball(BallParams::default()).unwrap();
        let dt = 0.01;
        let prob = EstimationProblem::new(
            &sys,
            &meas,
            vec![DVector::zeros(2)],
            None,
            dt,
            DMatrix::identity(2, 2),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]),
            ModeId(0),
        )
        .unwrap();
        let w_cov = DMatrix::from_diagonal_element(4, 4, 0.3);
        let belief = GaussianBelief {
            mean: HybridState::new(ModeId(0), prob.x0_prior.clone(), 0.0),
            cov: DMatrix::identity(4, 4),
        };
        let (next, ev) = skf_predict(&prob, &belief, &DVector::zeros(0), dt, &w_cov).unwrap();
        assert!(ev.is_none());

        let mut a = DMatrix::<f64>::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let expected = &a * &belief.cov * a.transpose() + &w_cov;
        assert!((next.cov - expected).norm() < 1e-12);
    }

    #[test]
    fn event_predict_uses_split_flow_saltation_sandwich() {
        let (sys, meas) = make_ball(BallParams::default()).unwrap();
        let dt = 0.2;
        let prob = EstimationProblem::new(
            &sys,
            &meas,
            vec![DVector::zeros(2)],
            None,
            dt,
            DMatrix::identity(2, 2),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]),
            ModeId(0),
        )
        .unwrap();
        let w_cov = DMatrix::zeros(4, 4);
        let belief = GaussianBelief {
            mean: HybridState::new(ModeId(0), prob.x0_prior.clone(), 0.0),
            cov: DMatrix::identity(4, 4),
        };
        let (next, ev) = skf_predict(&prob, &belief, &DVector::zeros(0), dt, &w_cov).unwrap();
        let ev = ev.expect("impact inside the step");

        // Ballistic flow is linear, so A(tau) is exact and the expected
        // covariance is the A2 Xi A1 sandwich. With zero-length flow portions
        // this reduces to Xi P Xi^T + W.
        let lin = |tau: f64| {
            let mut a = DMatrix::<f64>::identity(4, 4);
            a[(0, 2)] = tau;
            a[(1, 3)] = tau;
            a
        };
        let m = lin(dt - ev.t_event) * &ev.salt * lin(ev.t_event);
        let expected = &m * &belief.cov * m.transpose();
        assert!((next.cov - expected).norm() < 1e-10);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_trace() {
        let (_, meas) = make_ball(BallParams::default()).unwrap();
        let belief = GaussianBelief {
            mean: HybridState::new(ModeId(0), DVector::from_vec(vec![0.1, 0.9, 0.5, -5.0]), 0.0),
            cov: DMatrix::identity(4, 4),
        };
        let y = meas.eval(&belief.mean.x);
        let updated = skf_update(&belief, &y, &meas, &DMatrix::identity(2, 2)).unwrap();
        assert!((updated.mean.x - &belief.mean.x).norm() < 1e-14);
        assert!(updated.cov.trace() <= belief.cov.trace());
    }

    #[test]
    fn scalar_kalman_algebra() {
        // P = 1, H = 1, V = 1, innovation 1: gain 1/2, P' = 1/2.
        let meas = MeasurementModel::position_selector(1, 1);
        let belief = GaussianBelief {
            mean: HybridState::new(ModeId(0), DVector::from_vec(vec![0.0]), 0.0),
            cov: DMatrix::identity(1, 1),
        };
        let y = DVector::from_vec(vec![1.0]);
        let updated = skf_update(&belief, &y, &meas, &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(updated.mean.x[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(updated.cov[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uninformative_measurement_leaves_belief_unchanged() {
        let meas = MeasurementModel {
            m: 1,
            h: Box::new(|_| DVector::zeros(1)),
            jacobian: Box::new(|x| DMatrix::zeros(1, x.len())),
        };
        let belief = GaussianBelief {
            mean: HybridState::new(ModeId(0), DVector::from_vec(vec![0.7, -0.3]), 0.0),
            cov: DMatrix::identity(2, 2),
        };
        let y = DVector::from_vec(vec![5.0]);
        let updated = skf_update(&belief, &y, &meas, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(updated.mean.x, belief.mean.x);
        assert!((updated.cov - &belief.cov).norm() < 1e-14);
    }

    #[test]
    fn clean_data_tracks_truth_and_is_deterministic() {
        use crate::hybrid::simulate;
        let (sys, meas) = make_ball(BallParams::default()).unwrap();
        let x_true = DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]);
        let n_steps = 60;
        let dt = 0.01;
        let noise = vec![DVector::zeros(4); n_steps];
        let truth = simulate(
            &sys,
            &HybridState::new(ModeId(0), x_true.clone(), 0.0),
            None,
            &noise,
            dt,
            n_steps,
        )
        .unwrap();
        let ys: Vec<DVector<f64>> = truth.samples[1..]
            .iter()
            .map(|s| meas.eval(&s.x))
            .collect();
        let prob = EstimationProblem::new(
            &sys,
            &meas,
            ys,
            None,
            dt,
            DMatrix::identity(2, 2),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            x_true,
            ModeId(0),
        )
        .unwrap();
        let v_cov = DMatrix::from_diagonal_element(2, 2, 1e-8);
        let w_cov = DMatrix::from_diagonal_element(4, 4, 1e-8);
        let p_0 = DMatrix::from_diagonal_element(4, 4, 1e-8);
        let run_a = run_skf(&prob, &v_cov, &w_cov, &p_0).unwrap();
        let run_b = run_skf(&prob, &v_cov, &w_cov, &p_0).unwrap();
        for (i, (b, s)) in run_a.beliefs.iter().zip(&truth.samples).enumerate() {
            assert!(
                (&b.mean.x - &s.x).norm() < 1e-5,
                "estimate diverged from clean truth at sample {i}"
            );
        }
        for (a, b) in run_a.beliefs.iter().zip(&run_b.beliefs) {
            assert_eq!(a.mean.x, b.mean.x);
            assert_eq!(a.cov, b.cov);
        }
    }
}
