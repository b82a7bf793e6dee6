use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hilqe::backward::backward_pass;
use crate::hilqe::forward::forward_pass;
use crate::hilqe::problem::{EstimationProblem, SolverIterate};

/// Which matrix carries gradients through hybrid events in the backward
/// pass. `ResetJacobian` drops the time-to-impact correction and exists for
/// ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Saltation,
    ResetJacobian,
}

/// Solver configuration. Alpha starts at `alpha_init` and halves on each
/// rejected line-search trial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_line_search_iters: usize,
    pub alpha_init: f64,
    pub alpha_scale: f64,
    /// Accepted-decrease threshold that terminates the outer loop.
    pub cost_decrease_tol: f64,
    /// Levenberg regularization ramp for Q_ww.
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_scale: f64,
    /// State-norm bound beyond which a rollout counts as diverged.
    pub divergence_bound: f64,
    pub gradient_mode: GradientMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            max_line_search_iters: 16,
            alpha_init: 1.0,
            alpha_scale: 0.5,
            cost_decrease_tol: 1e-6,
            mu_min: 1e-8,
            mu_max: 1e4,
            mu_scale: 10.0,
            divergence_bound: 1e8,
            gradient_mode: GradientMode::Saltation,
        }
    }
}

/// One accepted outer iteration.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: f64,
    pub expected_decrease: f64,
    pub alpha: f64,
    pub event_count: usize,
}

/// Solve statistics: accepted iterations, convergence status, and costs.
#[derive(Debug, Clone, Default)]
pub struct SolverStats {
    pub iterations: Vec<IterationLog>,
    pub converged: bool,
    /// Line search could not find a decreasing step before convergence.
    pub line_search_exhausted: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

impl SolverStats {
    /// Per-iteration log as CSV: iteration, cost, expected decrease, accepted
    /// alpha, event count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,cost,expected_decrease,alpha,event_count\n");
        for rec in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                rec.iteration, rec.cost, rec.expected_decrease, rec.alpha, rec.event_count
            );
        }
        out
    }
}

/// Iterate backward and forward passes with a halving line search until the
/// accepted cost decrease falls below tolerance or the iteration budget is
/// spent. Every accepted step strictly decreases the cost, so the returned
/// iterate never costs more than the initial one. Non-convergence is
/// reported in the stats rather than as an error.
pub fn solve(
    prob: &EstimationProblem,
    init: SolverIterate,
    cfg: &SolverConfig,
) -> Result<(SolverIterate, SolverStats)> {
    let mut it = init;
    let mut stats = SolverStats {
        initial_cost: it.cost,
        final_cost: it.cost,
        ..Default::default()
    };

    for outer in 0..cfg.max_outer_iters {
        let (vexp, gains) = backward_pass(prob, &it, cfg)?;

        let mut alpha = cfg.alpha_init;
        let mut accepted: Option<SolverIterate> = None;
        let mut accepted_alpha = 0.0;
        for _ in 0..cfg.max_line_search_iters {
            match forward_pass(prob, &it, &vexp, &gains, alpha, cfg) {
                Ok(trial) if trial.cost < it.cost => {
                    accepted_alpha = alpha;
                    accepted = Some(trial);
                    break;
                }
                // A trial that fails to decrease, diverges, or trips a hybrid
                // integration error is rejected; retry with a smaller step.
                Ok(_) | Err(_) => alpha *= cfg.alpha_scale,
            }
        }

        match accepted {
            Some(trial) => {
                let decrease = it.cost - trial.cost;
                it = trial;
                stats.iterations.push(IterationLog {
                    iteration: outer,
                    cost: it.cost,
                    expected_decrease: gains.delta_j,
                    alpha: accepted_alpha,
                    event_count: it.events.len(),
                });
                if decrease < cfg.cost_decrease_tol {
                    stats.converged = true;
                    break;
                }
            }
            None => {
                // No improving step exists at any alpha: treat the iterate as
                // a fixed point of the search.
                stats.line_search_exhausted = true;
                stats.converged = true;
                break;
            }
        }
    }

    stats.final_cost = it.cost;
    Ok((it, stats))
}
