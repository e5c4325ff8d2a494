//! Where a sequence's score maps come from.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;
use streamseg::adapter::{self, MethodRun, RunOptions, ScoreStore};
use streamseg::io::SequenceManifest;
use streamseg::synthgen::ScorerStream;
use streamseg::{GroundTruthFrame, LatencyProfile, ReferenceScorer, ScoreMap, ScorerKind};

use crate::UsageError;

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Method command line, run once per sequence and fed frames over stdin
    #[arg(long, value_name = "CMD")]
    pub method_cmd: Option<String>,
    /// Per-frame timeout for --method-cmd
    #[arg(long, default_value_t = 10_000, value_name = "MS")]
    pub timeout_ms: u64,
    /// Directory of precomputed `%06d.scor` files; `{seq}` is replaced by the sequence id
    #[arg(long, value_name = "DIR")]
    pub precomputed: Option<String>,
    /// Timing CSV for --precomputed (frame_index,inference_ms); `{seq}` as above
    #[arg(long, value_name = "CSV", requires = "precomputed")]
    pub timing: Option<String>,
    /// Built-in reference scorer: oracle, noisy:<sigma>, dilated:<r>,
    /// shifted:<dx>,<dy>, constant:<c>, delayed:<k>
    #[arg(long, value_name = "KIND")]
    pub scorer: Option<ScorerKind>,
    /// Seed for stochastic reference scorers
    #[arg(long, default_value_t = 0)]
    pub scorer_seed: u64,
    /// Name used in reports and output paths
    #[arg(long)]
    pub method_id: Option<String>,
}

impl SourceArgs {
    pub fn check(&self) -> Result<()> {
        let given = [
            self.method_cmd.is_some(),
            self.precomputed.is_some(),
            self.scorer.is_some(),
        ];
        match given.iter().filter(|&&g| g).count() {
            1 => Ok(()),
            0 => Err(UsageError::new("one of --method-cmd, --precomputed or --scorer is required").into()),
            _ => Err(UsageError::new("--method-cmd, --precomputed and --scorer are mutually exclusive").into()),
        }
    }

    pub fn method_id(&self) -> String {
        if let Some(id) = &self.method_id {
            return id.clone();
        }
        if let Some(cmd) = &self.method_cmd {
            let first = cmd.split_whitespace().next().unwrap_or("method");
            return Path::new(first)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "method".into());
        }
        if let Some(dir) = &self.precomputed {
            return Path::new(dir)
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "precomputed".into());
        }
        match self.scorer {
            Some(kind) => scorer_name(kind),
            None => "method".into(),
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        json!({
            "method_id": self.method_id(),
            "method_cmd": self.method_cmd,
            "timeout_ms": self.timeout_ms,
            "precomputed": self.precomputed,
            "timing": self.timing,
            "scorer": self.scorer,
            "scorer_seed": self.scorer_seed,
        })
    }
}

pub fn scorer_name(kind: ScorerKind) -> String {
    match kind {
        ScorerKind::Oracle => "oracle".into(),
        ScorerKind::Noisy { sigma } => format!("noisy-{sigma}"),
        ScorerKind::Dilated { radius } => format!("dilated-{radius}"),
        ScorerKind::Shifted { dx, dy } => format!("shifted-{dx}-{dy}"),
        ScorerKind::Constant { value } => format!("constant-{value}"),
        ScorerKind::Delayed { frames } => format!("delayed-{frames}"),
    }
}

fn substitute(pattern: &str, sequence_id: &str) -> PathBuf {
    PathBuf::from(pattern.replace("{seq}", sequence_id))
}

/// Score maps for one sequence, handed out in frame order.
pub enum ScoreFeed {
    Store(ScoreStore),
    Scorer(ScorerStream),
}

impl ScoreFeed {
    pub fn next(&mut self, frame: &GroundTruthFrame) -> Result<ScoreMap> {
        Ok(match self {
            ScoreFeed::Store(store) => store.get(frame.index)?,
            ScoreFeed::Scorer(s) => s.score(frame),
        })
    }
}

pub struct Prepared {
    pub feed: ScoreFeed,
    /// Latency recorded by the source, if it has one.
    pub latency: Option<LatencyProfile>,
}

/// Runs or loads the method for the sequence at `sequence_dir`.
/// `out_root` receives method artifacts (scores, timing, log) when set.
pub fn prepare(
    args: &SourceArgs,
    sequence_dir: &Path,
    manifest: &SequenceManifest,
    out_root: Option<&Path>,
) -> Result<Prepared> {
    let id = &manifest.sequence_id;
    if let Some(cmd) = &args.method_cmd {
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        let opts = RunOptions {
            method_id: args.method_id(),
            timeout: Duration::from_millis(args.timeout_ms),
            out_root: out_root.map(Path::to_path_buf),
        };
        let MethodRun { scores, latency, .. } = adapter::run_batch(&argv, sequence_dir, &opts)
            .map_err(|failure| {
                log::error!(
                    "{}: {} of {} frames completed before failure",
                    id,
                    failure.partial.scores.len(),
                    manifest.frame_count
                );
                failure.error
            })?;
        return Ok(Prepared {
            feed: ScoreFeed::Store(scores),
            latency: Some(latency),
        });
    }
    if let Some(dir) = &args.precomputed {
        let dir = substitute(dir, id);
        return Ok(match &args.timing {
            Some(timing) => {
                let timing = substitute(timing, id);
                let run = adapter::load_precomputed(
                    &args.method_id(),
                    &dir,
                    &timing,
                    manifest.frame_count,
                    manifest.fps,
                )
                .with_context(|| format!("loading precomputed scores for {id}"))?;
                Prepared {
                    feed: ScoreFeed::Store(run.scores),
                    latency: Some(run.latency),
                }
            }
            None => Prepared {
                feed: ScoreFeed::Store(ScoreStore::OnDisk {
                    dir,
                    frames: manifest.frame_count,
                }),
                latency: None,
            },
        });
    }
    let kind = args.scorer.expect("checked by SourceArgs::check");
    let scorer = ReferenceScorer {
        kind,
        rng_seed: args.scorer_seed,
    };
    Ok(Prepared {
        feed: ScoreFeed::Scorer(ScorerStream::new(scorer)),
        latency: None,
    })
}
