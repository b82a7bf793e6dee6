mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use config::{resolve_out_dir, resolve_spec, CommonArgs};
use hilqe::harness::{
    aggregate_metrics, export_results, generate_trial, render_plots, run_comparison, MetricsCurves,
    MetricsSummary, SystemKind, TrialSpec,
};
use hilqe::hilqe::{initial_iterate, solve, EstimationProblem};
use hilqe::hybrid::HybridTrajectory;
use hilqe::models::MeasurementModel;
use hilqe::skf::run_skf;

/// Offline state estimation for event-driven hybrid systems: simulate the
/// benchmark models, run the iterative smoother and the salted Kalman filter,
/// and reproduce the Monte-Carlo comparisons.
#[derive(Parser)]
#[command(name = "hilqe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Hilqe,
    Skf,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one noisy ground-truth trajectory and its measurements.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the estimators on one simulated trial and write the estimates.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Which estimator(s) to run.
        #[arg(long, value_enum, default_value_t = EstimatorArg::Both)]
        estimator: EstimatorArg,
        /// Omit covariance columns from the filter belief CSV.
        #[arg(long)]
        no_skf_cov: bool,
    },
    /// Full Monte-Carlo comparison: trials, metrics, plots, manifest.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-render charts from an existing metrics.csv.
    Plot {
        /// Path to a metrics.csv produced by `bench`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for the charts (default: alongside the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Estimate {
            common,
            estimator,
            no_skf_cov,
        } => cmd_estimate(&common, estimator, no_skf_cov),
        Command::Bench { common } => cmd_bench(&common),
        Command::Plot { input, out } => cmd_plot(&input, out.as_deref()),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn system_label(spec: &TrialSpec) -> &'static str {
    match spec.system {
        SystemKind::Ball => "ball",
        SystemKind::Aslip => "aslip",
    }
}

fn measurements_csv(measurements: &[DVector<f64>], dt: f64) -> String {
    use std::fmt::Write as _;
    let m = measurements.first().map_or(0, |y| y.len());
    let mut out = String::from("t");
    for j in 0..m {
        let _ = write!(out, ",y_{j}");
    }
    out.push('\n');
    for (i, y) in measurements.iter().enumerate() {
        let _ = write!(out, "{}", (i + 1) as f64 * dt);
        for j in 0..m {
            let _ = write!(out, ",{}", y[j]);
        }
        out.push('\n');
    }
    out
}

fn write_trajectory(dir: &Path, stem: &str, traj: &HybridTrajectory) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), &traj.to_csv())?;
    write(
        &dir.join(format!("{stem}_events.csv")),
        &traj.events_to_csv(),
    )
}

fn cmd_simulate(common: &CommonArgs) -> Result<()> {
    let spec = resolve_spec(common)?;
    let out_dir = resolve_out_dir(common, &format!("simulate_{}", system_label(&spec)));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let (sys, meas) = spec.build_system()?;
    let (truth, measurements) = generate_trial(&spec, &sys, &meas, 0)?;
    write_trajectory(&out_dir, "truth", &truth)?;
    write(
        &out_dir.join("measurements.csv"),
        &measurements_csv(&measurements, spec.dt),
    )?;
    println!(
        "simulated {} for {:.3} s ({} steps, {} events) -> {}",
        system_label(&spec),
        spec.duration,
        spec.n_steps(),
        truth.events.len(),
        out_dir.display()
    );
    Ok(())
}

fn build_problem<'a>(
    spec: &TrialSpec,
    sys: &'a hilqe::hybrid::HybridSystemDef,
    meas: &'a MeasurementModel,
    measurements: Vec<DVector<f64>>,
) -> Result<EstimationProblem<'a>> {
    let chol = |m: &nalgebra::DMatrix<f64>, name: &str| {
        m.clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| anyhow::anyhow!("{name} is not positive definite"))
    };
    let p_v = chol(&spec.v_cov, "v_cov")?;
    let p_w = chol(&spec.w_cov, "w_cov")?;
    let p0 = hilqe::harness::belief_p0(&spec.p_0, spec.p0_floor);
    let p_x = chol(&p0, "p_0")?;
    Ok(EstimationProblem::new(
        sys,
        meas,
        measurements,
        None,
        spec.dt,
        p_v,
        p_w,
        p_x,
        spec.x0_nominal.clone(),
        spec.initial_mode(),
    )?)
}

fn cmd_estimate(common: &CommonArgs, estimator: EstimatorArg, no_skf_cov: bool) -> Result<()> {
    let spec = resolve_spec(common)?;
    let out_dir = resolve_out_dir(common, &format!("estimate_{}", system_label(&spec)));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let (sys, meas) = spec.build_system()?;
    let (truth, measurements) = generate_trial(&spec, &sys, &meas, 0)?;
    write_trajectory(&out_dir, "truth", &truth)?;
    write(
        &out_dir.join("measurements.csv"),
        &measurements_csv(&measurements, spec.dt),
    )?;

    let prob = build_problem(&spec, &sys, &meas, measurements)?;

    if matches!(estimator, EstimatorArg::Skf | EstimatorArg::Both) {
        let run = run_skf(
            &prob,
            &spec.v_cov,
            &spec.w_cov,
            &hilqe::harness::belief_p0(&spec.p_0, spec.p0_floor),
        )?;
        write(&out_dir.join("est_skf.csv"), &run.to_csv(!no_skf_cov))?;
        println!("skf: {} beliefs, {} events", run.beliefs.len(), run.events.len());
    }

    if matches!(estimator, EstimatorArg::Hilqe | EstimatorArg::Both) {
        let init = initial_iterate(&prob)?;
        let init_cost = init.cost;
        let (it, stats) = solve(&prob, init, &spec.solver)?;
        if common.verbose {
            for rec in &stats.iterations {
                eprintln!(
                    "iter {:3}: J = {:.6} (expected decrease {:.3e}, alpha {}, {} events)",
                    rec.iteration, rec.cost, rec.expected_decrease, rec.alpha, rec.event_count
                );
            }
        }
        let traj = HybridTrajectory {
            samples: it
                .xs
                .iter()
                .zip(&it.modes)
                .enumerate()
                .map(|(i, (x, &mode))| {
                    hilqe::hybrid::HybridState::new(mode, x.clone(), i as f64 * spec.dt)
                })
                .collect(),
            events: it.events.clone(),
        };
        write_trajectory(&out_dir, "est_hilqe", &traj)?;
        write(&out_dir.join("solver_log.csv"), &stats.to_csv())?;
        println!(
            "hilqe: J {:.6} -> {:.6} in {} accepted iterations (converged: {})",
            init_cost,
            it.cost,
            stats.iterations.len(),
            stats.converged
        );
    }

    println!("estimates written to {}", out_dir.display());
    Ok(())
}

fn cmd_bench(common: &CommonArgs) -> Result<()> {
    let spec = resolve_spec(common)?;
    let out_dir = resolve_out_dir(common, &format!("bench_{}", system_label(&spec)));

    let started = Instant::now();
    let outcome = run_comparison(&spec, common.jobs)?;
    let runtime = started.elapsed().as_secs_f64();

    if outcome.results.is_empty() {
        export_results(&outcome, None, &spec, &out_dir, runtime)?;
        bail!("all {} trials failed; see manifest.json", spec.trials);
    }
    let summary = aggregate_metrics(&outcome.results, spec.dt)?;
    export_results(&outcome, Some(&summary), &spec, &out_dir, runtime)?;
    render_plots(&MetricsCurves::from_summary(&summary), &out_dir)?;

    println!(
        "bench {}: {} trials ({} failed) in {:.1} s -> {}",
        system_label(&spec),
        spec.trials,
        outcome.failures.len(),
        runtime,
        out_dir.display()
    );
    println!(
        "median MSE improvement: {:.2}% (alternative reading {:.2}%)",
        summary.median_improvement(spec.median_variant),
        summary.median_of_mse_ratio_pct
    );
    println!(
        "peak per-timestep improvement: {:.2}%",
        summary.peak_timestep_improvement_pct
    );
    println!(
        "mode accuracy near impacts: hilqe {:.4}, skf {:.4}",
        summary.mode_accuracy_hilqe, summary.mode_accuracy_skf
    );
    if !outcome.failures.is_empty() {
        bail!("{} of {} trials failed", outcome.failures.len(), spec.trials);
    }
    Ok(())
}

fn cmd_plot(input: &Path, out: Option<&Path>) -> Result<()> {
    let text =
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let curves = MetricsSummary::curves_from_csv(&text)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let files = render_plots(&curves, &out_dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
