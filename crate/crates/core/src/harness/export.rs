use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HybridError, Result};
use crate::harness::metrics::MetricsSummary;
use crate::harness::rng::trial_seed;
use crate::harness::trial::{BenchOutcome, TrialFailure, TrialResult, TrialSpec};

/// Run manifest written next to the exported CSVs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: TrialSpec,
    /// Content hash of the canonical spec serialization.
    pub content_hash: String,
    pub trial_seeds: Vec<u64>,
    pub trial_files: Vec<String>,
    pub failure_count: usize,
    pub failures: Vec<TrialFailure>,
    pub runtime_seconds: f64,
}

fn io_err(path: &Path, e: std::io::Error) -> HybridError {
    HybridError::ParameterError(format!("{}: {e}", path.display()))
}

/// One combined CSV per trial: truth, both estimates, and error magnitudes
/// at each sample time; measurement columns are empty at t = 0 (the first
/// measurement arrives at sample 1).
fn trial_csv(r: &TrialResult) -> String {
    let n = r.truth.samples[0].x.len();
    let m = r.measurements.first().map_or(0, |y| y.len());
    let mut out = String::from("t,mode_truth");
    for j in 0..n {
        let _ = write!(out, ",x_truth_{j}");
    }
    for j in 0..m {
        let _ = write!(out, ",y_{j}");
    }
    out.push_str(",mode_hilqe");
    for j in 0..n {
        let _ = write!(out, ",x_hilqe_{j}");
    }
    out.push_str(",mode_skf");
    for j in 0..n {
        let _ = write!(out, ",x_skf_{j}");
    }
    out.push_str(",err_hilqe,err_skf\n");

    for i in 0..r.truth.samples.len() {
        let truth = &r.truth.samples[i];
        let _ = write!(out, "{},{}", truth.t, truth.mode);
        for j in 0..n {
            let _ = write!(out, ",{}", truth.x[j]);
        }
        for j in 0..m {
            if i == 0 {
                out.push(',');
            } else {
                let _ = write!(out, ",{}", r.measurements[i - 1][j]);
            }
        }
        let est_h = &r.est_hilqe.samples[i];
        let _ = write!(out, ",{}", est_h.mode);
        for j in 0..n {
            let _ = write!(out, ",{}", est_h.x[j]);
        }
        let est_s = &r.est_skf.samples[i];
        let _ = write!(out, ",{}", est_s.mode);
        for j in 0..n {
            let _ = write!(out, ",{}", est_s.x[j]);
        }
        let _ = write!(
            out,
            ",{},{}\n",
            r.errors_hilqe.magnitude[i], r.errors_skf.magnitude[i]
        );
    }
    out
}

/// Write per-trial CSVs, the aggregate metrics CSV, and a JSON manifest into
/// `out_dir`. Returns the manifest.
pub fn export_results(
    outcome: &BenchOutcome,
    summary: Option<&MetricsSummary>,
    spec: &TrialSpec,
    out_dir: &Path,
    runtime_seconds: f64,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut trial_files = Vec::new();
    for r in &outcome.results {
        let name = format!("trial_{:04}.csv", r.trial_index);
        let path = out_dir.join(&name);
        fs::write(&path, trial_csv(r)).map_err(|e| io_err(&path, e))?;
        trial_files.push(name);
    }

    if let Some(summary) = summary {
        let path = out_dir.join("metrics.csv");
        fs::write(&path, summary.to_csv()).map_err(|e| io_err(&path, e))?;
    }

    let spec_json = serde_json::to_string(spec)
        .map_err(|e| HybridError::ParameterError(format!("spec serialization: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(spec_json.as_bytes());
    let content_hash = format!("{:x}", hasher.finalize());

    let manifest = RunManifest {
        spec: spec.clone(),
        content_hash,
        trial_seeds: (0..spec.trials as u64)
            .map(|i| trial_seed(spec.seed, i))
            .collect(),
        trial_files,
        failure_count: outcome.failures.len(),
        failures: outcome.failures.clone(),
        runtime_seconds,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HybridError::ParameterError(format!("manifest serialization: {e}")))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;

    Ok(manifest)
}

/// Paths of everything a bench run writes, for determinism checks.
pub fn exported_files(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(out_dir)
        .map_err(|e| io_err(out_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::aggregate_metrics;
    use crate::harness::trial::run_comparison;

    #[test]
    fn export_writes_expected_file_set() {
        let dir = std::env::temp_dir().join(format!("hilqe_export_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);

        let mut spec = TrialSpec::ball(2, 2);
        spec.duration = 0.3;
        let outcome = run_comparison(&spec, 1).unwrap();
        assert_eq!(outcome.results.len(), 2);
        let summary = aggregate_metrics(&outcome.results, spec.dt).unwrap();
        let manifest = export_results(&outcome, Some(&summary), &spec, &dir, 1.25).unwrap();

        assert_eq!(manifest.trial_files.len(), 2);
        assert_eq!(manifest.failure_count, 0);
        assert_eq!(manifest.trial_seeds.len(), 2);
        assert!(dir.join("metrics.csv").exists());
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("trial_0000.csv").exists());
        assert!(dir.join("trial_0001.csv").exists());

        // Round trip the metrics curves.
        let text = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        let curves = MetricsSummary::curves_from_csv(&text).unwrap();
        assert_eq!(curves.mean_err_hilqe, summary.mean_err_hilqe);

        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn empty_outcome_writes_manifest_only() {
        let dir = std::env::temp_dir().join(format!("hilqe_export_empty_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let spec = TrialSpec::ball(2, 1);
        let outcome = BenchOutcome {
            results: Vec::new(),
            failures: Vec::new(),
        };
        let manifest = export_results(&outcome, None, &spec, &dir, 0.0).unwrap();
        assert!(manifest.trial_files.is_empty());
        assert!(dir.join("manifest.json").exists());
        assert!(!dir.join("metrics.csv").exists());
        let _ = fs::remove_dir_all(&dir);
    }
}
