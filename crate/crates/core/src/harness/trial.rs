use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HybridError, Result};
use crate::harness::rng::{gaussian_factor, sample_gaussian, stream_rng, StreamRole};
use crate::hilqe::{
    initial_iterate, solve, EstimationProblem, SolverConfig, SolverIterate, SolverStats,
};
use crate::hybrid::{simulate, HybridState, HybridSystemDef, HybridTrajectory, ModeId};
use crate::models::{
    aslip_nominal_state, make_aslip, make_ball, AslipParams, BallParams, MeasurementModel,
};
use crate::skf::{run_skf, SkfRun};

/// Which benchmark system a trial specification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Ball,
    Aslip,
}

/// How the median MSE improvement is computed across trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianVariant {
    /// Median over trials of the per-trial improvement ratio (default).
    #[default]
    PerTrialRatio,
    /// Ratio of the medians of the two MSE populations.
    RatioOfMedians,
}

/// Complete description of one Monte-Carlo experiment: the system, seeding,
/// horizon, noise covariances, nominal initial state, and solver settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSpec {
    pub system: SystemKind,
    pub seed: u64,
    /// Trial length in seconds; duration / dt must be integral.
    pub duration: f64,
    pub dt: f64,
    /// Per-step process noise covariance.
    pub w_cov: DMatrix<f64>,
    /// Per-sample measurement noise covariance.
    pub v_cov: DMatrix<f64>,
    /// Initial-state covariance (exactly zero permitted).
    pub p_0: DMatrix<f64>,
    /// Nominal initial state, used as the prior mean.
    pub x0_nominal: DVector<f64>,
    pub trials: usize,
    /// Half-width in seconds of the window around each true event inside
    /// which mode accuracy is scored.
    pub mode_window: f64,
    /// Inverse-covariance floor applied when p_0 is singular.
    pub p0_floor: f64,
    pub ball: BallParams,
    pub aslip: AslipParams,
    pub solver: SolverConfig,
    pub median_variant: MedianVariant,
}

impl TrialSpec {
    /// Bouncing-ball experiment: 1 s at 100 Hz from [0, 1, 0.5, -5].
    ///
    /// The initial state is given exactly (P_0 = 0) while the estimators
    /// start from the floored belief covariance 0.2 I4. The per-step process
    /// noise covariance 1e-3 I4 and the measurement covariance I2 yield a
    /// single impact event in every trial.
    pub fn ball(seed: u64, trials: usize) -> Self {
        Self {
            system: SystemKind::Ball,
            seed,
            duration: 1.0,
            dt: 0.01,
            w_cov: DMatrix::from_diagonal_element(4, 4, 1e-3),
            v_cov: DMatrix::identity(2, 2),
            p_0: DMatrix::zeros(4, 4),
            x0_nominal: DVector::from_vec(vec![0.0, 1.0, 0.5, -5.0]),
            trials,
            mode_window: 0.05,
            p0_floor: 0.2,
            ball: BallParams::default(),
            aslip: AslipParams::default(),
            solver: SolverConfig::default(),
            median_variant: MedianVariant::default(),
        }
    }

    /// ASLIP hopper experiment: 1 kHz sampling, body dropped from 2.5 m with
    /// the toe at 1 m, initial covariance 1e-5 I8, per-step process noise
    /// covariance 1e-7 I8 (the scale at which trials keep the leg geometry
    /// intact and typically hop four times over 5 s), measurement covariance
    /// I5 on the five positions.
    pub fn aslip(seed: u64, trials: usize, duration: f64) -> Self {
        Self {
            system: SystemKind::Aslip,
            seed,
            duration,
            dt: 1e-3,
            w_cov: DMatrix::from_diagonal_element(8, 8, 1e-7),
            v_cov: DMatrix::identity(5, 5),
            p_0: DMatrix::from_diagonal_element(8, 8, 1e-5),
            x0_nominal: aslip_nominal_state(),
            trials,
            mode_window: 0.05,
            p0_floor: 1e-6,
            ball: BallParams::default(),
            aslip: AslipParams::default(),
            solver: SolverConfig::default(),
            median_variant: MedianVariant::default(),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn state_dim(&self) -> usize {
        match self.system {
            SystemKind::Ball => 4,
            SystemKind::Aslip => 8,
        }
    }

    pub fn build_system(&self) -> Result<(HybridSystemDef, MeasurementModel)> {
        match self.system {
            SystemKind::Ball => make_ball(self.ball),
            SystemKind::Aslip => make_aslip(self.aslip),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.duration <= 0.0 {
            return Err(HybridError::ParameterError(
                "duration and dt must be positive".into(),
            ));
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(HybridError::ParameterError(format!(
                "duration/dt must be integral, got {ratio}"
            )));
        }
        if self.trials == 0 {
            return Err(HybridError::ParameterError("trials must be >= 1".into()));
        }
        let n = self.state_dim();
        let m = match self.system {
            SystemKind::Ball => 2,
            SystemKind::Aslip => 5,
        };
        for (name, mat, dim) in [
            ("w_cov", &self.w_cov, n),
            ("v_cov", &self.v_cov, m),
            ("p_0", &self.p_0, n),
        ] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(HybridError::DimensionMismatch(format!(
                    "{name} must be {dim}x{dim}"
                )));
            }
        }
        if self.x0_nominal.len() != n {
            return Err(HybridError::DimensionMismatch(format!(
                "x0_nominal must have length {n}"
            )));
        }
        Ok(())
    }

    pub fn initial_mode(&self) -> ModeId {
        ModeId(0)
    }
}

/// Sample one trial: initial state from N(x0_nominal, P_0), process noises
/// from N(0, W), then y_i = h(x_i) + v_i with v ~ N(0, V). All draws come
/// from streams keyed by (seed, trial_index, role).
pub fn generate_trial(
    spec: &TrialSpec,
    sys: &HybridSystemDef,
    meas: &MeasurementModel,
    trial_index: usize,
) -> Result<(HybridTrajectory, Vec<DVector<f64>>)> {
    let n = spec.state_dim();
    let n_steps = spec.n_steps();

    let mut rng_init = stream_rng(spec.seed, trial_index as u64, StreamRole::Init);
    let mut rng_proc = stream_rng(spec.seed, trial_index as u64, StreamRole::Process);
    let mut rng_meas = stream_rng(spec.seed, trial_index as u64, StreamRole::Measurement);

    let l_p0 = gaussian_factor(&spec.p_0);
    let l_w = gaussian_factor(&spec.w_cov);
    let l_v = gaussian_factor(&spec.v_cov);

    let x0 = &spec.x0_nominal + sample_gaussian(&mut rng_init, n, l_p0.as_ref());
    let noises: Vec<DVector<f64>> = (0..n_steps)
        .map(|_| sample_gaussian(&mut rng_proc, n, l_w.as_ref()))
        .collect();

    let start = HybridState::new(spec.initial_mode(), x0, 0.0);
    let truth = simulate(sys, &start, None, &noises, spec.dt, n_steps)?;

    let measurements: Vec<DVector<f64>> = truth.samples[1..]
        .iter()
        .map(|s| meas.eval(&s.x) + sample_gaussian(&mut rng_meas, meas.m, l_v.as_ref()))
        .collect();

    Ok((truth, measurements))
}

/// Per-timestep error traces of one estimator against the truth.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    /// Euclidean error magnitude per sample.
    pub magnitude: Vec<f64>,
    /// Absolute per-dimension errors, indexed [dim][sample].
    pub per_dim: Vec<Vec<f64>>,
    /// Mean over samples of the squared error magnitude.
    pub mse: f64,
}

impl ErrorSeries {
    pub fn against_truth(truth: &[HybridState], est: &[DVector<f64>]) -> Self {
        let n = truth[0].x.len();
        let count = truth.len();
        let mut magnitude = Vec::with_capacity(count);
        let mut per_dim = vec![Vec::with_capacity(count); n];
        let mut sq_sum = 0.0;
        for (s, e) in truth.iter().zip(est) {
            let diff = e - &s.x;
            let mag = diff.norm();
            sq_sum += mag * mag;
            magnitude.push(mag);
            for d in 0..n {
                per_dim[d].push(diff[d].abs());
            }
        }
        Self {
            magnitude,
            per_dim,
            mse: sq_sum / count as f64,
        }
    }
}

/// Everything recorded about one paired SKF/HiLQE trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial_index: usize,
    pub truth: HybridTrajectory,
    pub measurements: Vec<DVector<f64>>,
    pub est_hilqe: HybridTrajectory,
    pub est_skf: HybridTrajectory,
    pub errors_hilqe: ErrorSeries,
    pub errors_skf: ErrorSeries,
    /// Per-sample hybrid mode/epoch agreement with the truth.
    pub mode_match_hilqe: Vec<bool>,
    pub mode_match_skf: Vec<bool>,
    /// Samples lying within the mode window of a true event time.
    pub in_window: Vec<bool>,
    pub hilqe_stats: SolverStats,
    /// Estimation cost of each estimate under the optimization objective.
    pub hilqe_cost: f64,
    pub skf_cost: f64,
}

/// A trial that could not be completed; recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_index: usize,
    pub error: String,
}

/// Outcome of a full comparison run.
pub struct BenchOutcome {
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

fn iterate_to_trajectory(it: &SolverIterate, dt: f64) -> HybridTrajectory {
    let samples = it
        .xs
        .iter()
        .zip(&it.modes)
        .enumerate()
        .map(|(i, (x, &mode))| HybridState::new(mode, x.clone(), i as f64 * dt))
        .collect();
    HybridTrajectory {
        samples,
        events: it.events.clone(),
    }
}

fn skf_to_trajectory(run: &SkfRun) -> HybridTrajectory {
    let samples = run.beliefs.iter().map(|b| b.mean.clone()).collect();
    HybridTrajectory {
        samples,
        events: run.events.clone(),
    }
}

/// Mode agreement per sample: the estimate must match the truth's mode label
/// and its hybrid epoch (events crossed so far), so that a self-transition
/// like the ball bounce still counts as a mode change.
fn mode_matches(truth: &HybridTrajectory, est: &HybridTrajectory) -> Vec<bool> {
    (0..truth.samples.len())
        .map(|i| {
            truth.samples[i].mode == est.samples[i].mode
                && truth.epoch_at(i) == est.epoch_at(i)
        })
        .collect()
}

fn window_mask(truth: &HybridTrajectory, dt: f64, half_width: f64) -> Vec<bool> {
    let times: Vec<f64> = (0..truth.samples.len()).map(|i| i as f64 * dt).collect();
    times
        .iter()
        .map(|&t| {
            truth
                .events
                .iter()
                .any(|ev| (t - ev.t_event).abs() <= half_width)
        })
        .collect()
}

fn cholesky_inverse(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(HybridError::NotPositiveDefinite { name })
}

/// The estimators' initial-state covariance: P_0 itself when it is positive
/// definite, otherwise P_0 floored by `floor` I. A singular (e.g. zero) P_0
/// still samples the truth exactly; the floor only shapes the estimators'
/// prior belief.
pub fn belief_p0(p_0: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if p_0.clone().cholesky().is_some() {
        p_0.clone()
    } else {
        let n = p_0.nrows();
        p_0 + DMatrix::from_diagonal_element(n, n, floor)
    }
}

/// Run one trial end to end: generate data, run the SKF and HiLQE on the
/// identical measurement sequence, and score both against the truth.
pub fn run_trial(
    spec: &TrialSpec,
    sys: &HybridSystemDef,
    meas: &MeasurementModel,
    weights: &(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
    trial_index: usize,
) -> Result<TrialResult> {
    let (p_v, p_w, p_x) = weights;
    let (truth, measurements) = generate_trial(spec, sys, meas, trial_index)?;

    let prob = EstimationProblem::new(
        sys,
        meas,
        measurements.clone(),
        None,
        spec.dt,
        p_v.clone(),
        p_w.clone(),
        p_x.clone(),
        spec.x0_nominal.clone(),
        spec.initial_mode(),
    )?;

    let skf_run = run_skf(&prob, &spec.v_cov, &spec.w_cov, &belief_p0(&spec.p_0, spec.p0_floor))?;
    let init = initial_iterate(&prob)?;
    let (it, stats) = solve(&prob, init, &spec.solver)?;

    let est_hilqe = iterate_to_trajectory(&it, spec.dt);
    let est_skf = skf_to_trajectory(&skf_run);

    let skf_states: Vec<DVector<f64>> = est_skf.samples.iter().map(|s| s.x.clone()).collect();
    let skf_modes: Vec<ModeId> = est_skf.samples.iter().map(|s| s.mode).collect();
    let skf_cost = prob
        .cost_of_state_sequence(&skf_states, &skf_modes)
        .unwrap_or(f64::INFINITY);

    Ok(TrialResult {
        trial_index,
        errors_hilqe: ErrorSeries::against_truth(&truth.samples, &it.xs),
        errors_skf: ErrorSeries::against_truth(&truth.samples, &skf_states),
        mode_match_hilqe: mode_matches(&truth, &est_hilqe),
        mode_match_skf: mode_matches(&truth, &est_skf),
        in_window: window_mask(&truth, spec.dt, spec.mode_window),
        hilqe_cost: it.cost,
        skf_cost,
        hilqe_stats: stats,
        truth,
        measurements,
        est_hilqe,
        est_skf,
    })
}

/// Monte-Carlo comparison over all trials of the spec. Trials run
/// independently (in parallel when `jobs != 1`) and results are gathered in
/// trial-index order; per-trial failures are recorded, not fatal.
pub fn run_comparison(spec: &TrialSpec, jobs: usize) -> Result<BenchOutcome> {
    spec.validate()?;
    let (sys, meas) = spec.build_system()?;
    let p_v = cholesky_inverse(&spec.v_cov, "v_cov")?;
    let p_w = cholesky_inverse(&spec.w_cov, "w_cov")?;
    let p_x = cholesky_inverse(&belief_p0(&spec.p_0, spec.p0_floor), "p_0 (floored)")?;
    let weights = (p_v, p_w, p_x);

    let run_all = || -> Vec<std::result::Result<TrialResult, TrialFailure>> {
        (0..spec.trials)
            .into_par_iter()
            .map(|idx| {
                run_trial(spec, &sys, &meas, &weights, idx).map_err(|e| TrialFailure {
                    trial_index: idx,
                    error: e.to_string(),
                })
            })
            .collect()
    };

    let raw = if jobs == 1 {
        // Sequential fast path without touching the global pool.
        (0..spec.trials)
            .map(|idx| {
                run_trial(spec, &sys, &meas, &weights, idx).map_err(|e| TrialFailure {
                    trial_index: idx,
                    error: e.to_string(),
                })
            })
            .collect()
    } else if jobs == 0 {
        run_all()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HybridError::ParameterError(format!("thread pool: {e}")))?;
        pool.install(run_all)
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for item in raw {
        match item {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(BenchOutcome { results, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_trials_are_reproducible() {
        let spec = TrialSpec::ball(11, 1);
        let (sys, meas) = spec.build_system().unwrap();
        let (truth_a, ys_a) = generate_trial(&spec, &sys, &meas, 0).unwrap();
        let (truth_b, ys_b) = generate_trial(&spec, &sys, &meas, 0).unwrap();
        for (a, b) in truth_a.samples.iter().zip(&truth_b.samples) {
            assert_eq!(a.x, b.x);
        }
        assert_eq!(ys_a, ys_b);
        // Different trial index gives different data.
        let (truth_c, _) = generate_trial(&spec, &sys, &meas, 1).unwrap();
        assert_ne!(truth_a.samples[1].x, truth_c.samples[1].x);
    }

    #[test]
    fn zero_covariances_give_exact_measurements() {
        let mut spec = TrialSpec::ball(5, 1);
        spec.w_cov = DMatrix::zeros(4, 4);
        spec.v_cov = DMatrix::zeros(2, 2);
        spec.p_0 = DMatrix::zeros(4, 4);
        let (sys, meas) = spec.build_system().unwrap();
        let (truth, ys) = generate_trial(&spec, &sys, &meas, 0).unwrap();
        for (i, y) in ys.iter().enumerate() {
            let expected = meas.eval(&truth.samples[i + 1].x);
            assert_eq!(*y, expected);
        }
        // Exactly one impact in the noise-free case.
        assert_eq!(truth.events.len(), 1);
    }

    #[test]
    fn single_trial_comparison_is_deterministic() {
        let mut spec = TrialSpec::ball(3, 1);
        spec.duration = 0.4;
        let a = run_comparison(&spec, 1).unwrap();
        let b = run_comparison(&spec, 1).unwrap();
        assert_eq!(a.results.len(), 1);
        assert!(a.failures.is_empty());
        let (ra, rb) = (&a.results[0], &b.results[0]);
        assert_eq!(ra.errors_hilqe.magnitude, rb.errors_hilqe.magnitude);
        assert_eq!(ra.errors_skf.magnitude, rb.errors_skf.magnitude);
        assert_eq!(ra.hilqe_cost, rb.hilqe_cost);
    }
}
