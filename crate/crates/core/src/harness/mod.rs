//! Monte-Carlo experiment driver: seeded trial generation, paired SKF/HiLQE
//! runs, error metrics, CSV persistence, and static plot rendering.

mod export;
mod metrics;
mod plot;
mod rng;
mod trial;

pub use export::{export_results, exported_files, RunManifest};
pub use metrics::{
    aggregate_metrics, bootstrap_positive_fraction, MetricsCurves, MetricsSummary,
};
pub use plot::{magnitude_chart, per_dimension_chart, render_plots};
pub use rng::{gaussian_factor, sample_gaussian, stream_rng, trial_seed, StreamRole};
pub use trial::{
    belief_p0, generate_trial, run_comparison, run_trial, BenchOutcome, ErrorSeries,
    MedianVariant, SystemKind, TrialFailure, TrialResult, TrialSpec,
};
