mod commands;
mod config;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use streamseg::MetricKind;

use source::SourceArgs;

/// Latency-aware evaluation of video anomaly segmentation.
#[derive(Debug, Parser)]
#[command(name = "streamseg", version)]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "STREAMSEG_JOBS")]
    jobs: Option<usize>,
    /// JSON file of flag values; flags on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic driving sequence
    Gen(GenArgs),
    /// Latency-agnostic and latency-aware metrics for one or more sequences
    Evaluate(EvaluateArgs),
    /// Temporal consistency of a method's predictions
    Consistency(ConsistencyArgs),
    /// Latency-aware metrics of the ground-truth oracle at several latencies
    Oracle(OracleArgs),
    /// Warp one frame's mask into another frame
    Warp(WarpArgs),
    /// Merge evaluation reports and print them as a table
    Report(ReportArgs),
}

const SUBCOMMANDS: &[&str] = &["gen", "evaluate", "consistency", "oracle", "warp", "report"];

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synth")]
    pub id: String,
    /// Full scene description (JSON); other scene flags override it
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<u32>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Horizontal field of view in degrees
    #[arg(long)]
    pub hfov: Option<f64>,
    /// Camera height above the ground in meters
    #[arg(long)]
    pub camera_height: Option<f64>,
    /// Forward speed in m/s
    #[arg(long)]
    pub speed: Option<f64>,
    /// Number of randomly placed anomalies
    #[arg(long)]
    pub anomalies: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Camera does not move and every anomaly is present from the first frame
    #[arg(long = "static")]
    pub still: bool,
    /// Omit depth and pose channels
    #[arg(long)]
    pub no_geometry: bool,
    /// Also write reference-scorer outputs to scores/<method-id>/
    #[arg(long, value_name = "KIND")]
    pub scorer: Option<streamseg::ScorerKind>,
    #[arg(long, default_value_t = 0)]
    pub scorer_seed: u64,
    #[arg(long)]
    pub method_id: Option<String>,
    /// Inference time written to timing/<method-id>.csv for --scorer
    #[arg(long, default_value_t = 0.0, value_name = "MS")]
    pub latency_ms: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    /// Sequence directories
    #[arg(required = true)]
    pub sequences: Vec<PathBuf>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Fixed inference time, replacing any measured or recorded timing
    #[arg(long, value_name = "MS")]
    pub latency_ms: Option<f64>,
    /// Metrics to report
    #[arg(long, value_delimiter = ',', default_value = "auroc,auprc,fpr95")]
    pub metrics: Vec<MetricKind>,
    /// Also measure temporal consistency (needs depth and poses)
    #[arg(long)]
    pub consistency: bool,
    #[command(flatten)]
    pub delta: DeltaArgs,
    /// Directory for report.json, report.csv and method artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DeltaArgs {
    /// Gap between compared predictions, in seconds
    #[arg(long, default_value_t = 1.0, value_name = "S")]
    pub delta_seconds: f64,
    /// Gap in frames, overriding --delta-seconds
    #[arg(long, value_name = "N")]
    pub delta_frames: Option<usize>,
    /// Points farther than this are excluded from the comparison, meters
    #[arg(long, default_value_t = streamseg::reprojection::DEFAULT_MAX_DEPTH)]
    pub max_depth: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ConsistencyArgs {
    pub sequence: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub delta: DeltaArgs,
    /// Directory for consistency.json and consistency_pairs.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct OracleArgs {
    pub sequence: PathBuf,
    /// Latencies in frames
    #[arg(long, value_delimiter = ',', default_value = "0,6,15,30,60")]
    pub latencies: Vec<usize>,
    /// Latencies in milliseconds, converted at the sequence frame rate
    #[arg(long, value_delimiter = ',', value_name = "MS", conflicts_with = "latencies")]
    pub latencies_ms: Option<Vec<f64>>,
    /// CSV output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct WarpArgs {
    pub sequence: PathBuf,
    /// Source frame index
    #[arg(long)]
    pub from: u32,
    /// Destination frame index
    #[arg(long)]
    pub to: u32,
    /// Warp the binarized scores in this directory instead of the ground truth
    #[arg(long, value_name = "DIR")]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = streamseg::reprojection::DEFAULT_MAX_DEPTH)]
    pub max_depth: f64,
    /// Output prefix for <prefix>.warped.mask and <prefix>.valid.mask
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    /// report.json files
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Directory for the merged report.json and report.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Bad flag values detected after parsing.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Some requested metric was not computed on any frame.
#[derive(Debug)]
pub struct NonConformant(pub String);

impl std::fmt::Display for NonConformant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConformant {}

fn fail(kind: &str, err: &anyhow::Error, code: u8) -> ExitCode {
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let body = json!({ "error": kind, "message": chain.join(": ") });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect(), SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => return fail("usage", &e, 2),
    };
    let cli = Cli::parse_from(args);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return fail("usage", &anyhow::anyhow!("--jobs must be at least 1"), 2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail("io", &e.into(), 1),
    };
    let result = pool.install(|| match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Consistency(a) => commands::consistency(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Warp(a) => commands::warp(&a),
        Command::Report(a) => commands::report(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<UsageError>().is_some() {
                return fail("usage", &e, 2);
            }
            if e.downcast_ref::<NonConformant>().is_some() {
                return fail("nonconformant", &e, 3);
            }
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<streamseg::Error>())
                .map_or("error", |se| se.kind());
            fail(kind, &e, 1)
        }
    }
}
