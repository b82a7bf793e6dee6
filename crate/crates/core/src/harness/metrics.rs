use std::fmt::Write as _;

use crate::error::{HybridError, Result};
use crate::harness::trial::{MedianVariant, TrialResult};

/// Timesteps where the SKF mean error falls below this floor are excluded
/// from the peak-improvement scan to avoid dividing by zero.
const PEAK_FLOOR: f64 = 1e-12;

/// Aggregated benchmark metrics: mean error curves, improvement statistics,
/// and mode accuracy near impacts.
#[derive(Debug, Clone)]
pub struct MetricsSummary {
    /// Sample times of the error curves.
    pub times: Vec<f64>,
    pub mean_err_hilqe: Vec<f64>,
    pub mean_err_skf: Vec<f64>,
    /// Per-timestep improvement of the averaged curves, percent; NaN-free
    /// (0 where the SKF curve is below the floor).
    pub improvement_pct: Vec<f64>,
    /// Mean absolute per-dimension error curves, indexed [dim][sample].
    pub per_dim_hilqe: Vec<Vec<f64>>,
    pub per_dim_skf: Vec<Vec<f64>>,
    /// Median over trials of 100 (MSE_skf - MSE_hilqe) / MSE_skf.
    pub median_mse_improvement_pct: f64,
    /// Alternative reading: 100 (median MSE_skf - median MSE_hilqe) / median MSE_skf.
    pub median_of_mse_ratio_pct: f64,
    pub peak_timestep_improvement_pct: f64,
    /// Pooled fraction of in-window samples with correct mode/epoch.
    pub mode_accuracy_hilqe: f64,
    pub mode_accuracy_skf: f64,
    /// Per-trial MSE improvements and in-window mode accuracies, for
    /// bootstrap confidence estimates.
    pub per_trial_mse_improvement_pct: Vec<f64>,
    pub per_trial_mode_acc_hilqe: Vec<f64>,
    pub per_trial_mode_acc_skf: Vec<f64>,
    pub trial_count: usize,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Aggregate per-trial results into summary curves and statistics. The trial
/// order does not affect any output (means and medians only).
pub fn aggregate_metrics(results: &[TrialResult], dt: f64) -> Result<MetricsSummary> {
    if results.is_empty() {
        return Err(HybridError::ParameterError(
            "cannot aggregate an empty result set".into(),
        ));
    }
    let n_samples = results[0].errors_hilqe.magnitude.len();
    let n_dims = results[0].errors_hilqe.per_dim.len();
    let n_trials = results.len();

    let mut mean_err_hilqe = vec![0.0; n_samples];
    let mut mean_err_skf = vec![0.0; n_samples];
    let mut per_dim_hilqe = vec![vec![0.0; n_samples]; n_dims];
    let mut per_dim_skf = vec![vec![0.0; n_samples]; n_dims];

    for r in results {
        for i in 0..n_samples {
            mean_err_hilqe[i] += r.errors_hilqe.magnitude[i];
            mean_err_skf[i] += r.errors_skf.magnitude[i];
            for d in 0..n_dims {
                per_dim_hilqe[d][i] += r.errors_hilqe.per_dim[d][i];
                per_dim_skf[d][i] += r.errors_skf.per_dim[d][i];
            }
        }
    }
    let scale = 1.0 / n_trials as f64;
    for i in 0..n_samples {
        mean_err_hilqe[i] *= scale;
        mean_err_skf[i] *= scale;
        for d in 0..n_dims {
            per_dim_hilqe[d][i] *= scale;
            per_dim_skf[d][i] *= scale;
        }
    }

    let improvement_pct: Vec<f64> = (0..n_samples)
        .map(|i| {
            if mean_err_skf[i] < PEAK_FLOOR {
                0.0
            } else {
                100.0 * (mean_err_skf[i] - mean_err_hilqe[i]) / mean_err_skf[i]
            }
        })
        .collect();
    let peak_timestep_improvement_pct = (0..n_samples)
        .filter(|&i| mean_err_skf[i] >= PEAK_FLOOR)
        .map(|i| improvement_pct[i])
        .fold(f64::NEG_INFINITY, f64::max);

    let per_trial_mse_improvement_pct: Vec<f64> = results
        .iter()
        .filter(|r| r.errors_skf.mse > PEAK_FLOOR)
        .map(|r| 100.0 * (r.errors_skf.mse - r.errors_hilqe.mse) / r.errors_skf.mse)
        .collect();
    let median_mse_improvement_pct = median(&per_trial_mse_improvement_pct);

    let mse_skf: Vec<f64> = results.iter().map(|r| r.errors_skf.mse).collect();
    let mse_hilqe: Vec<f64> = results.iter().map(|r| r.errors_hilqe.mse).collect();
    let med_skf = median(&mse_skf);
    let median_of_mse_ratio_pct = if med_skf > PEAK_FLOOR {
        100.0 * (med_skf - median(&mse_hilqe)) / med_skf
    } else {
        0.0
    };

    // Mode accuracy pooled over in-window samples; per-trial fractions kept
    // for bootstrap confidence intervals.
    let mut pooled = [0usize; 2];
    let mut pooled_total = 0usize;
    let mut per_trial_mode_acc_hilqe = Vec::new();
    let mut per_trial_mode_acc_skf = Vec::new();
    for r in results {
        let mut counts = [0usize; 2];
        let mut total = 0usize;
        for i in 0..n_samples {
            if r.in_window[i] {
                total += 1;
                counts[0] += r.mode_match_hilqe[i] as usize;
                counts[1] += r.mode_match_skf[i] as usize;
            }
        }
        if total > 0 {
            per_trial_mode_acc_hilqe.push(counts[0] as f64 / total as f64);
            per_trial_mode_acc_skf.push(counts[1] as f64 / total as f64);
            pooled[0] += counts[0];
            pooled[1] += counts[1];
            pooled_total += total;
        }
    }
    let (mode_accuracy_hilqe, mode_accuracy_skf) = if pooled_total > 0 {
        (
            pooled[0] as f64 / pooled_total as f64,
            pooled[1] as f64 / pooled_total as f64,
        )
    } else {
        (1.0, 1.0)
    };

    Ok(MetricsSummary {
        times: (0..n_samples).map(|i| i as f64 * dt).collect(),
        mean_err_hilqe,
        mean_err_skf,
        improvement_pct,
        per_dim_hilqe,
        per_dim_skf,
        median_mse_improvement_pct,
        median_of_mse_ratio_pct,
        peak_timestep_improvement_pct,
        mode_accuracy_hilqe,
        mode_accuracy_skf,
        per_trial_mse_improvement_pct,
        per_trial_mode_acc_hilqe,
        per_trial_mode_acc_skf,
        trial_count: n_trials,
    })
}

impl MetricsSummary {
    /// The median improvement under the requested variant.
    pub fn median_improvement(&self, variant: MedianVariant) -> f64 {
        match variant {
            MedianVariant::PerTrialRatio => self.median_mse_improvement_pct,
            MedianVariant::RatioOfMedians => self.median_of_mse_ratio_pct,
        }
    }

    /// metrics.csv: timestep, t, mean errors, per-timestep improvement, then
    /// per-dimension mean error columns.
    pub fn to_csv(&self) -> String {
        let n_dims = self.per_dim_hilqe.len();
        let mut out = String::from("timestep,t,mean_err_hilqe,mean_err_skf,improvement_pct");
        for d in 0..n_dims {
            let _ = write!(out, ",err_hilqe_d{d}");
        }
        for d in 0..n_dims {
            let _ = write!(out, ",err_skf_d{d}");
        }
        out.push('\n');
        for i in 0..self.times.len() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                i, self.times[i], self.mean_err_hilqe[i], self.mean_err_skf[i],
                self.improvement_pct[i]
            );
            for d in 0..n_dims {
                let _ = write!(out, ",{}", self.per_dim_hilqe[d][i]);
            }
            for d in 0..n_dims {
                let _ = write!(out, ",{}", self.per_dim_skf[d][i]);
            }
            out.push('\n');
        }
        out
    }

    /// Parse the curve columns back from metrics.csv (the inverse of
    /// [`Self::to_csv`] for everything the plots need).
    pub fn curves_from_csv(text: &str) -> Result<MetricsCurves> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| HybridError::ParameterError("empty metrics CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let n_dims = cols.iter().filter(|c| c.starts_with("err_hilqe_d")).count();
        let mut curves = MetricsCurves {
            times: Vec::new(),
            mean_err_hilqe: Vec::new(),
            mean_err_skf: Vec::new(),
            improvement_pct: Vec::new(),
            per_dim_hilqe: vec![Vec::new(); n_dims],
            per_dim_skf: vec![Vec::new(); n_dims],
        };
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 + 2 * n_dims {
                return Err(HybridError::ParameterError(format!(
                    "metrics CSV line {}: expected {} fields, got {}",
                    lineno + 2,
                    5 + 2 * n_dims,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| HybridError::ParameterError(format!("line {}: {e}", lineno + 2)))
            };
            curves.times.push(parse(fields[1])?);
            curves.mean_err_hilqe.push(parse(fields[2])?);
            curves.mean_err_skf.push(parse(fields[3])?);
            curves.improvement_pct.push(parse(fields[4])?);
            for d in 0..n_dims {
                curves.per_dim_hilqe[d].push(parse(fields[5 + d])?);
                curves.per_dim_skf[d].push(parse(fields[5 + n_dims + d])?);
            }
        }
        Ok(curves)
    }
}

/// The plottable subset of a metrics summary, as recovered from CSV.
#[derive(Debug, Clone)]
pub struct MetricsCurves {
    pub times: Vec<f64>,
    pub mean_err_hilqe: Vec<f64>,
    pub mean_err_skf: Vec<f64>,
    pub improvement_pct: Vec<f64>,
    pub per_dim_hilqe: Vec<Vec<f64>>,
    pub per_dim_skf: Vec<Vec<f64>>,
}

impl MetricsCurves {
    pub fn from_summary(s: &MetricsSummary) -> Self {
        Self {
            times: s.times.clone(),
            mean_err_hilqe: s.mean_err_hilqe.clone(),
            mean_err_skf: s.mean_err_skf.clone(),
            improvement_pct: s.improvement_pct.clone(),
            per_dim_hilqe: s.per_dim_hilqe.clone(),
            per_dim_skf: s.per_dim_skf.clone(),
        }
    }
}

/// Seeded bootstrap over per-trial paired differences: returns the fraction
/// of resampled means that are strictly positive.
pub fn bootstrap_positive_fraction(diffs: &[f64], resamples: usize, seed: u64) -> f64 {
    use crate::harness::rng::{stream_rng, StreamRole};
    use rand::Rng;
    assert!(!diffs.is_empty());
    let mut rng = stream_rng(seed, u64::MAX, StreamRole::Init);
    let mut positive = 0usize;
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..diffs.len() {
            let idx = rng.gen_range(0..diffs.len());
            sum += diffs[idx];
        }
        if sum > 0.0 {
            positive += 1;
        }
    }
    positive as f64 / resamples as f64
}
