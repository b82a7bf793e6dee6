use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use hilqe::harness::{MedianVariant, SystemKind, TrialSpec};
use hilqe::hilqe::SolverConfig;
use hilqe::models::{AslipParams, BallParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Ball,
    Aslip,
}

impl From<SystemArg> for SystemKind {
    fn from(value: SystemArg) -> Self {
        match value {
            SystemArg::Ball => SystemKind::Ball,
            SystemArg::Aslip => SystemKind::Aslip,
        }
    }
}

/// Benchmark scale presets: `desk` runs in minutes on a laptop, `paper`
/// matches the full-scale experiment sizes (1000 ball trials; 100 five-second
/// hopper trials).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

/// Covariance entry in a JSON config: a scalar (times identity), a diagonal,
/// or a full row-major matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovSpec {
    pub fn to_matrix(&self, dim: usize, field: &str) -> Result<DMatrix<f64>> {
        match self {
            CovSpec::Scalar(v) => Ok(DMatrix::from_diagonal_element(dim, dim, *v)),
            CovSpec::Diagonal(d) => {
                if d.len() != dim {
                    bail!("config field '{field}': diagonal has {} entries, expected {dim}", d.len());
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(d.clone())))
            }
            CovSpec::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    bail!("config field '{field}': matrix must be {dim}x{dim}");
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(dim, dim, &flat))
            }
        }
    }
}

/// JSON run configuration; every field is optional and overrides the preset
/// defaults for the selected system. Flags override file values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub system: Option<String>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub trials: Option<usize>,
    pub w_cov: Option<CovSpec>,
    pub v_cov: Option<CovSpec>,
    pub p_0: Option<CovSpec>,
    pub x0_nominal: Option<Vec<f64>>,
    pub mode_window: Option<f64>,
    pub p0_floor: Option<f64>,
    pub median_variant: Option<MedianVariant>,
    pub ball: Option<BallParams>,
    pub aslip: Option<AslipParams>,
    pub solver: Option<SolverConfig>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag-level overrides shared by all subcommands.
#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// System to run: ball or aslip.
    #[arg(long, value_enum)]
    pub system: Option<SystemArg>,
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of Monte-Carlo trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed for all trial streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Sample interval in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Output directory (default: $HILQE_OUT_ROOT or ./runs, plus a
    /// command-specific subdirectory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for the benchmark (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Benchmark scale preset.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Half-width of the mode-accuracy window around impacts, in
    /// milliseconds.
    #[arg(long)]
    pub mode_window_ms: Option<f64>,
    /// Print per-iteration solver progress.
    #[arg(short, long)]
    pub verbose: bool,
}

fn parse_system(name: &str) -> Result<SystemKind> {
    match name {
        "ball" => Ok(SystemKind::Ball),
        "aslip" => Ok(SystemKind::Aslip),
        other => bail!("config field 'system': unknown system '{other}' (expected ball or aslip)"),
    }
}

/// Resolve preset defaults, config file, and flags (in increasing priority)
/// into a validated trial specification.
pub fn resolve_spec(args: &CommonArgs) -> Result<TrialSpec> {
    let file = match &args.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };

    let system: SystemKind = match (args.system, &file.system) {
        (Some(flag), _) => flag.into(),
        (None, Some(name)) => parse_system(name)?,
        (None, None) => bail!("missing required field 'system': pass --system or set it in the config file"),
    };

    let seed = args.seed.or(file.seed).unwrap_or(7);
    let mut spec = match (system, args.preset) {
        (SystemKind::Ball, Preset::Desk) => TrialSpec::ball(seed, 100),
        (SystemKind::Ball, Preset::Paper) => TrialSpec::ball(seed, 1000),
        (SystemKind::Aslip, Preset::Desk) => TrialSpec::aslip(seed, 10, 2.5),
        (SystemKind::Aslip, Preset::Paper) => TrialSpec::aslip(seed, 100, 5.0),
    };

    // File overrides.
    if let Some(v) = file.duration {
        spec.duration = v;
    }
    if let Some(v) = file.dt {
        spec.dt = v;
    }
    if let Some(v) = file.trials {
        spec.trials = v;
    }
    if let Some(v) = &file.x0_nominal {
        spec.x0_nominal = DVector::from_vec(v.clone());
    }
    if let Some(v) = file.mode_window {
        spec.mode_window = v;
    }
    if let Some(v) = file.p0_floor {
        spec.p0_floor = v;
    }
    if let Some(v) = file.median_variant {
        spec.median_variant = v;
    }
    if let Some(v) = file.ball {
        spec.ball = v;
    }
    if let Some(v) = file.aslip {
        spec.aslip = v;
    }
    if let Some(v) = file.solver {
        spec.solver = v;
    }
    let n = spec.state_dim();
    let m = match system {
        SystemKind::Ball => 2,
        SystemKind::Aslip => 5,
    };
    if let Some(c) = &file.w_cov {
        spec.w_cov = c.to_matrix(n, "w_cov")?;
    }
    if let Some(c) = &file.v_cov {
        spec.v_cov = c.to_matrix(m, "v_cov")?;
    }
    if let Some(c) = &file.p_0 {
        spec.p_0 = c.to_matrix(n, "p_0")?;
    }

    // Flag overrides.
    if let Some(v) = args.trials {
        spec.trials = v;
    }
    if let Some(v) = args.duration {
        spec.duration = v;
    }
    if let Some(v) = args.dt {
        spec.dt = v;
    }
    if let Some(v) = args.mode_window_ms {
        spec.mode_window = v / 1000.0;
    }

    spec.validate()
        .map_err(|e| anyhow::anyhow!("invalid run configuration: {e}"))?;
    Ok(spec)
}

/// Output directory: --out, else $HILQE_OUT_ROOT/<label>, else runs/<label>.
pub fn resolve_out_dir(args: &CommonArgs, label: &str) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    let root = std::env::var_os("HILQE_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(label)
}
