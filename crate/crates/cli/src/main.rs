use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qipf::pipeline::{Stage, StageError};
use qipf::{BandwidthRule, QipfError};

mod commands;

/// Uncertainty scores for trained networks from the potential field of their
/// weights.
#[derive(Debug, Parser)]
#[command(name = "qipf", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Highest mode order K [default: 4]
    #[arg(long, global = true, value_name = "K")]
    modes: Option<usize>,
    /// Multiplier on the rule-of-thumb bandwidth [default: 80 for score/pool, 8 for demo sine, 20 for demo regression]
    #[arg(long, global = true, value_name = "F")]
    sigma_factor: Option<f64>,
    /// Approximate number of pooled weights
    #[arg(long, global = true, value_name = "P", default_value_t = 1024)]
    pool_target: usize,
    /// Predictions CSV whose y_eval values fit the mode offsets
    #[arg(long, global = true, value_name = "PATH")]
    calibration: Option<PathBuf>,
    #[arg(long, global = true, value_name = "S", default_value_t = 0)]
    seed: u64,
    /// Output file (directory for demo); stdout when omitted
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Average modes 0..=K instead of 1..=K
    #[arg(long, global = true)]
    include_mode_zero: bool,
    #[arg(long, global = true, value_enum, default_value_t = Rule::Silverman)]
    bandwidth_rule: Rule,
    /// Pool weight matrices only, dropping bias layers
    #[arg(long, global = true)]
    exclude_biases: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rule {
    Silverman,
    NormalReference,
}

impl From<Rule> for BandwidthRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Silverman => Self::Silverman,
            Rule::NormalReference => Self::NormalReference,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a prediction batch against a weight bundle
    Score {
        /// Weight bundle (QWB)
        weights: Option<PathBuf>,
        /// Predictions CSV
        predictions: Option<PathBuf>,
        /// Re-run with the configuration and inputs recorded in a manifest
        #[arg(long, value_name = "MANIFEST", conflicts_with_all = ["weights", "predictions"])]
        replay: Option<PathBuf>,
    },
    /// Ranking and calibration metrics of scores against prediction errors
    Metrics {
        scores: PathBuf,
        predictions: PathBuf,
        /// Equal-width confidence bins for ECE
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Curves for the sine-wave and toy-regression demos
    Demo {
        #[arg(value_enum)]
        which: DemoKind,
        /// Comma-separated L2 coefficients (regression)
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.01,0.2")]
        l2: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        /// Ensemble members for the baseline; 0 skips it
        #[arg(long, default_value_t = 10)]
        ensemble: usize,
        /// Stochastic passes for the MC-dropout baseline; 0 skips it
        #[arg(long, default_value_t = 100)]
        dropout_samples: usize,
    },
    /// Apply a covariate-shift corruption to images (.csv or .pgm)
    Corrupt {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Intensity in physical units: degrees, additive delta, shear factor, scale, or pixels right
        #[arg(long, allow_hyphen_values = true, required_unless_present = "severity", conflicts_with = "severity")]
        intensity: Option<f64>,
        /// Intensity as a 0-100 % severity
        #[arg(long)]
        severity: Option<f64>,
        /// Pixels down, for shift
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        dy: i64,
    },
    /// Time decomposition and scoring over field sizes and mode counts
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096,8192")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        repetitions: usize,
    },
    /// Pooled weights and the resulting kernel width
    Pool { weights: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoKind {
    Sine,
    Regression,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Rotation,
    Brightness,
    Shear,
    Zoom,
    Shift,
}

impl From<Kind> for qipf::shift::CorruptionKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Rotation => Self::Rotation,
            Kind::Brightness => Self::Brightness,
            Kind::Shear => Self::Shear,
            Kind::Zoom => Self::Zoom,
            Kind::Shift => Self::Shift,
        }
    }
}

fn configure_threads() -> Result<(), StageError> {
    let Ok(raw) = std::env::var("QIPF_THREADS") else {
        return Ok(());
    };
    let bad = |m: String| StageError::new(Stage::Load, "QIPF_THREADS", QipfError::InvalidArgument(m));
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| bad(format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| bad(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qipf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
