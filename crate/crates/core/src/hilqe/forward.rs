use nalgebra::DVector;

use crate::error::{HybridError, Result};
use crate::hilqe::backward::{initial_point_update, GainSchedule, ValueExpansion};
use crate::hilqe::problem::{EstimationProblem, SolverIterate};
use crate::hilqe::solver::SolverConfig;
use crate::hybrid::{rk4_step, step, EventRecord, HybridState};

/// State difference between the current rollout at sample i and the previous
/// iterate, extended across hybrid events so that trajectories straddling an
/// impact are compared in a common mode.
///
/// When both trajectories are in the same mode the difference is plain. When
/// the rollout has transitioned and the reference has not, the reference
/// sample at its own impact step j is pushed through the reset and the
/// reference's motion between i and j is mapped with the stored saltation
/// matrix. When the reference transitioned first, its pre-impact state is
/// re-integrated forward under the original mode's dynamics (reapplying the
/// reference's recorded noises) to synthesize the comparison state.
pub fn reference_extension(
    prob: &EstimationProblem,
    it_prev: &SolverIterate,
    s_new: &HybridState,
    i: usize,
    events_new: &[EventRecord],
) -> Result<DVector<f64>> {
    let mode_ref = it_prev.modes[i];
    // Epochs (event counts before sample i) rather than bare modes decide
    // whether the trajectories straddle an event: a self-transition such as
    // the ball bounce never changes the mode label.
    let epoch_new = events_new.iter().filter(|ev| ev.step_index < i).count();
    let epoch_ref = it_prev.epoch_at(i);
    if s_new.mode == mode_ref && epoch_new == epoch_ref {
        return Ok(&s_new.x - &it_prev.xs[i]);
    }

    if epoch_new > epoch_ref {
        // The rollout transitioned first; the reference crosses later at
        // step j (or is projected in place when it never crosses).
        match it_prev.events.iter().find(|ev| ev.step_index >= i) {
            Some(ev) => {
                let j = ev.step_index;
                let tr = prob
                    .sys
                    .find_transition(ev.from, ev.to)
                    .ok_or(HybridError::NoEventFound { step: i })?;
                let reset_ref = (tr.reset)(prob.sample_time(j), &it_prev.xs[j]);
                let carried = &ev.salt * (&it_prev.xs[j] - &it_prev.xs[i]);
                Ok(&s_new.x - reset_ref + carried)
            }
            None => {
                // No bracketing reference event: project the reference
                // through the rollout's own latest transition at this step.
                let ev = events_new.last().ok_or(HybridError::NoEventFound { step: i })?;
                let tr = prob
                    .sys
                    .find_transition(ev.from, ev.to)
                    .ok_or(HybridError::NoEventFound { step: i })?;
                let reset_ref = (tr.reset)(prob.sample_time(i), &it_prev.xs[i]);
                Ok(&s_new.x - reset_ref)
            }
        }
    } else if epoch_ref > epoch_new {
        // The reference transitioned first: back up to its impact point and
        // integrate forward with the original dynamics.
        let ev = it_prev
            .events
            .iter()
            .filter(|ev| ev.step_index < i)
            .next_back()
            .ok_or(HybridError::NoEventFound { step: i })?;
        let j = ev.step_index;
        let mut x = ev.x_minus.clone();
        // Remainder of the impact step, then full steps, mirroring the
        // rollout's end-of-step noise injection.
        let t_boundary = prob.sample_time(j + 1);
        x = rk4_step(
            prob.sys,
            ev.from,
            ev.t_event,
            &x,
            prob.u_at(j),
            t_boundary - ev.t_event,
        ) + &it_prev.ws[j];
        for k in (j + 1)..i {
            x = rk4_step(
                prob.sys,
                ev.from,
                prob.sample_time(k),
                &x,
                prob.u_at(k),
                prob.dt,
            ) + &it_prev.ws[k];
        }
        Ok(&s_new.x - x)
    } else {
        Err(HybridError::NoEventFound { step: i })
    }
}

/// Hybrid forward rollout with the line-search parameter alpha: updates the
/// initial point along the Newton direction, applies the noise update
/// w_i' = w_i - alpha k_i - K_i dx_i with reference-extended dx_i, and
/// re-detects events as the new trajectory is integrated.
pub fn forward_pass(
    prob: &EstimationProblem,
    it_prev: &SolverIterate,
    vexp: &ValueExpansion,
    gains: &GainSchedule,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolverIterate> {
    let horizon = prob.horizon();
    let dir = initial_point_update(&vexp.v_x[0], &vexp.v_xx[0], 1.0)?;
    let x0_new = &it_prev.xs[0] + alpha * dir;

    let mut xs = Vec::with_capacity(horizon + 1);
    let mut ws = Vec::with_capacity(horizon);
    let mut modes = Vec::with_capacity(horizon + 1);
    let mut events: Vec<EventRecord> = Vec::new();

    let mut s = HybridState::new(prob.mode_0, x0_new, 0.0);
    xs.push(s.x.clone());
    modes.push(s.mode);

    for i in 0..horizon {
        let dx = reference_extension(prob, it_prev, &s, i, &events)?;
        let w_new = &it_prev.ws[i] - alpha * &gains.k_ff[i] - &gains.k_fb[i] * dx;
        let (mut next, ev) = step(prob.sys, &s, prob.u_at(i), &w_new, prob.dt)?;
        next.t = prob.sample_time(i + 1);
        let norm = next.x.norm();
        if !norm.is_finite() || norm > cfg.divergence_bound {
            return Err(HybridError::RolloutDiverged {
                step: i,
                norm,
                bound: cfg.divergence_bound,
            });
        }
        if let Some(mut record) = ev {
            record.step_index = i;
            events.push(record);
        }
        ws.push(w_new);
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
