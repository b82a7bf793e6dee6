use nalgebra::DVector;

use crate::error::{HybridError, Result};
use crate::hybrid::integrate::rk4_step;
use crate::hybrid::system::{HybridSystemDef, ModeId, TransitionSpec};
use crate::hybrid::{MAX_BISECTIONS, TOL_G};

/// How a guard that is already at or below tolerance at the start of an
/// interval is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingPolicy {
    /// Fires immediately when the flow is moving out of the domain
    /// (guard rate negative); ignored while the flow re-enters. This keeps
    /// post-reset states that sit exactly on a guard (e.g. a ball at y = 0
    /// right after the bounce, or a hopper toe at touchdown) from retriggering.
    GatedOnGuardRate,
}

/// A located guard crossing inside one integration interval.
pub struct Crossing<'a> {
    pub t_star: f64,
    pub x_star: DVector<f64>,
    pub transition: &'a TransitionSpec,
    /// True when the crossing fired at the interval start because the state
    /// already sat at or beyond the guard with outward flow.
    pub at_start: bool,
}

/// Locate the earliest guard crossing of `mode` on [t0, t0 + dt] along the
/// flow from x0, refined by bisection to |g| <= TOL_G.
///
/// Returns `None` when no outgoing guard changes sign on the interval. A
/// guard already at or below tolerance at t0 fires immediately when the flow
/// points outward and is otherwise skipped for this interval.
pub fn locate_event<'a>(
    sys: &'a HybridSystemDef,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<Option<Crossing<'a>>> {
    // Start-of-interval classification.
    let mut immediate: Option<&TransitionSpec> = None;
    let mut skip: Vec<bool> = Vec::new();
    for tr in sys.outgoing(mode) {
        let g0 = (tr.guard)(t0, x0);
        if g0 <= TOL_G {
            let rate = tr.guard_rate(sys, t0, x0, u);
            if rate < 0.0 {
                if immediate.is_some() {
                    return Err(HybridError::MultipleSimultaneousCrossings { mode, t: t0 });
                }
                immediate = Some(tr);
            }
            skip.push(true);
        } else {
            skip.push(false);
        }
    }
    if let Some(tr) = immediate {
        return Ok(Some(Crossing {
            t_star: t0,
            x_star: x0.clone(),
            transition: tr,
            at_start: true,
        }));
    }
    if dt <= 0.0 {
        return Ok(None);
    }

    // One RK4 step to the interval end, then bracket sign changes.
    let x_end = rk4_step(sys, mode, t0, x0, u, dt);
    let mut best: Option<(f64, DVector<f64>, &TransitionSpec)> = None;
    for (idx, tr) in sys.outgoing(mode).enumerate() {
        if skip[idx] {
            continue;
        }
        let g_end = (tr.guard)(t0 + dt, &x_end);
        if g_end > 0.0 {
            continue;
        }
        let (t_star, x_star) = bisect_crossing(sys, mode, tr, t0, x0, u, dt, &x_end);
        match &best {
            Some((t_best, _, _)) => {
                if (t_star - t_best).abs() <= TOL_G {
                    return Err(HybridError::MultipleSimultaneousCrossings { mode, t: t_star });
                }
                if t_star < *t_best {
                    best = Some((t_star, x_star, tr));
                }
            }
            None => best = Some((t_star, x_star, tr)),
        }
    }

    Ok(best.map(|(t_star, x_star, transition)| Crossing {
        t_star,
        x_star,
        transition,
        at_start: false,
    }))
}

/// Bisection on the dense RK4 interval: candidate states are single RK4
/// steps of size tau - t0 from (t0, x0).
#[allow(clippy::too_many_arguments)]
fn bisect_crossing(
    sys: &HybridSystemDef,
    mode: ModeId,
    tr: &TransitionSpec,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    x_end: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let mut lo = 0.0; // g > 0 side, offset from t0
    let mut hi = dt; // g <= 0 side
    let mut hi_state = x_end.clone();

    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let x_mid = rk4_step(sys, mode, t0, x0, u, mid);
        let g_mid = (tr.guard)(t0 + mid, &x_mid);
        if g_mid.abs() <= TOL_G {
            return (t0 + mid, x_mid);
        }
        if g_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            hi_state = x_mid;
        }
    }
    (t0 + hi, hi_state)
}
