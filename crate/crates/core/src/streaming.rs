//! Sequence-level aggregation of per-frame metrics.
//!
//! The latency-agnostic score pairs each prediction with the ground truth of
//! its own frame. The latency-aware score pairs the prediction made for frame
//! `t` with the ground truth at `t + Δt(t)`, where `Δt(t)` is the method's
//! inference time expressed in frames. Frames whose target falls past the end
//! of the sequence are not evaluated, and frames whose target ground truth is
//! degenerate for a metric are left out of that metric's mean.
//!
//! This pairing follows the prediction forward in time. The other common
//! streaming reading, pairing each ground-truth instant with the latest
//! prediction completed before it, is not implemented.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{frame_metrics, FrameMetrics, MetricKind};
use crate::raster::{GroundTruthFrame, LabelMask, ScoreMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LatencyMode {
    Fixed { ms: f64 },
    Measured { per_frame_ms: Vec<f64> },
}

/// Inference time of a method, per frame or fixed, at the sequence frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    #[serde(flatten)]
    pub mode: LatencyMode,
    pub fps: f64,
}

impl LatencyProfile {
    pub fn fixed(ms: f64, fps: f64) -> Result<Self> {
        let p = Self {
            mode: LatencyMode::Fixed { ms },
            fps,
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn measured(per_frame_ms: Vec<f64>, fps: f64) -> Result<Self> {
        let p = Self {
            mode: LatencyMode::Measured { per_frame_ms },
            fps,
        };
        p.validate(None)?;
        Ok(p)
    }

    /// Checks latencies are finite and non-negative, and that a measured
    /// profile has one entry per frame when `frames` is given.
    pub fn validate(&self, frames: Option<usize>) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidLatency(format!("fps must be positive, got {}", self.fps)));
        }
        let bad = |ms: f64| !(ms >= 0.0 && ms.is_finite());
        match &self.mode {
            LatencyMode::Fixed { ms } if bad(*ms) => {
                Err(Error::InvalidLatency(format!("latency {ms} ms")))
            }
            LatencyMode::Fixed { .. } => Ok(()),
            LatencyMode::Measured { per_frame_ms } => {
                if let Some(i) = per_frame_ms.iter().position(|&ms| bad(ms)) {
                    return Err(Error::InvalidLatency(format!(
                        "latency {} ms at frame {}",
                        per_frame_ms[i],
                        i + 1
                    )));
                }
                match frames {
                    Some(n) if n != per_frame_ms.len() => Err(Error::InvalidLatency(format!(
                        "{} latency entries for {n} frames",
                        per_frame_ms.len()
                    ))),
                    _ => Ok(()),
                }
            }
        }
    }

    /// Latency of the frame at 0-based position `t`.
    pub fn latency_ms(&self, t: usize) -> f64 {
        match &self.mode {
            LatencyMode::Fixed { ms } => *ms,
            LatencyMode::Measured { per_frame_ms } => per_frame_ms[t],
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match &self.mode {
            LatencyMode::Fixed { ms } => *ms,
            LatencyMode::Measured { per_frame_ms } if per_frame_ms.is_empty() => 0.0,
            LatencyMode::Measured { per_frame_ms } => {
                per_frame_ms.iter().sum::<f64>() / per_frame_ms.len() as f64
            }
        }
    }

    /// Frame offsets for a sequence of `frames` frames.
    pub fn offsets(&self, frames: usize) -> Result<Vec<usize>> {
        self.validate(match self.mode {
            LatencyMode::Measured { .. } => Some(frames),
            LatencyMode::Fixed { .. } => None,
        })?;
        Ok((0..frames).map(|t| latency_to_frames(self, t)).collect())
    }
}

/// Number of frames until the frame whose timestamp is closest to the end of
/// inference. Exact half-frame ties round up.
pub fn ms_to_frames(ms: f64, fps: f64) -> usize {
    (ms * fps / 1000.0 + 0.5).floor() as usize
}

/// Frame offset charged to the prediction at 0-based position `t`.
pub fn latency_to_frames(profile: &LatencyProfile, t: usize) -> usize {
    ms_to_frames(profile.latency_ms(t), profile.fps)
}

/// Per-metric means over the frames where each metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub fpr_at_95: Option<f64>,
    pub auroc_frames: usize,
    pub auprc_frames: usize,
    pub fpr95_frames: usize,
    /// Evaluated pairs whose target frame lacks one of the two classes.
    pub skipped_degenerate: usize,
}

impl MeanMetrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Auroc => self.auroc,
            MetricKind::Auprc => self.auprc,
            MetricKind::Fpr95 => self.fpr_at_95,
        }
    }

    pub fn frames(&self, kind: MetricKind) -> usize {
        match kind {
            MetricKind::Auroc => self.auroc_frames,
            MetricKind::Auprc => self.auprc_frames,
            MetricKind::Fpr95 => self.fpr95_frames,
        }
    }
}

/// Ordered reduction of per-frame metrics. Summation runs in slice order, so
/// the result is independent of how the frames were computed.
pub fn aggregate(per_frame: &[FrameMetrics]) -> MeanMetrics {
    fn mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for v in values.flatten() {
            sum += v;
            n += 1;
        }
        ((n > 0).then(|| sum / n as f64), n)
    }
    let (auroc, auroc_frames) = mean(per_frame.iter().map(|m| m.auroc));
    let (auprc, auprc_frames) = mean(per_frame.iter().map(|m| m.auprc));
    let (fpr_at_95, fpr95_frames) = mean(per_frame.iter().map(|m| m.fpr_at_95));
    MeanMetrics {
        auroc,
        auprc,
        fpr_at_95,
        auroc_frames,
        auprc_frames,
        fpr95_frames,
        skipped_degenerate: per_frame
            .iter()
            .filter(|m| m.positives == 0 || m.negatives == 0)
            .count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub latency_agnostic: MeanMetrics,
    pub latency_aware: MeanMetrics,
    /// Latency-aware pairs with both classes present in the target frame.
    pub frames_evaluated: usize,
    /// Latency-aware pairs whose target frame is degenerate.
    pub frames_skipped_degenerate: usize,
    /// Frame offset charged to each prediction, in sequence order.
    pub delta_frames_used: Vec<usize>,
}

fn check_lengths(scores: usize, gt: usize) -> Result<()> {
    if scores != gt {
        return Err(Error::LengthMismatch {
            scores,
            frames: gt,
        });
    }
    if gt == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// Mean of `M(φ(x_t), y_t)` over all frames.
pub fn evaluate_latency_agnostic(
    scores: &[ScoreMap],
    gt: &[GroundTruthFrame],
) -> Result<MeanMetrics> {
    check_lengths(scores.len(), gt.len())?;
    let per_frame = scores
        .par_iter()
        .zip(gt.par_iter())
        .map(|(s, g)| frame_metrics(s, &g.mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per_frame))
}

/// Per-frame metrics for every `t` whose target `t + offsets[t]` exists,
/// in ascending `t`.
pub fn latency_shifted_metrics(
    scores: &[ScoreMap],
    gt: &[GroundTruthFrame],
    offsets: &[usize],
) -> Result<Vec<FrameMetrics>> {
    check_lengths(scores.len(), gt.len())?;
    assert_eq!(offsets.len(), scores.len(), "one offset per frame");
    let n = gt.len();
    let pairs: Vec<(usize, usize)> = offsets
        .iter()
        .enumerate()
        .filter_map(|(t, &d)| t.checked_add(d).filter(|&target| target < n).map(|tg| (t, tg)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    pairs
        .par_iter()
        .map(|&(t, target)| frame_metrics(&scores[t], &gt[target].mask))
        .collect()
}

/// Mean of `M(φ(x_t), y_{t+Δt(t)})` over frames whose target exists.
pub fn evaluate_latency_aware(
    scores: &[ScoreMap],
    gt: &[GroundTruthFrame],
    profile: &LatencyProfile,
) -> Result<MeanMetrics> {
    let offsets = profile.offsets(gt.len())?;
    Ok(aggregate(&latency_shifted_metrics(scores, gt, &offsets)?))
}

/// Both aggregates plus bookkeeping.
pub fn evaluate_sequence(
    scores: &[ScoreMap],
    gt: &[GroundTruthFrame],
    profile: &LatencyProfile,
) -> Result<SequenceMetrics> {
    let latency_agnostic = evaluate_latency_agnostic(scores, gt)?;
    let offsets = profile.offsets(gt.len())?;
    let aware = latency_shifted_metrics(scores, gt, &offsets)?;
    let latency_aware = aggregate(&aware);
    Ok(SequenceMetrics {
        latency_agnostic,
        frames_evaluated: aware.len() - latency_aware.skipped_degenerate,
        frames_skipped_degenerate: latency_aware.skipped_degenerate,
        latency_aware,
        delta_frames_used: offsets,
    })
}

enum Slot {
    Agnostic(usize),
    Aware(usize),
}

struct Job {
    slot: Slot,
    scores: Arc<ScoreMap>,
    mask: Arc<LabelMask>,
}

/// Single-pass evaluator fed one frame at a time.
///
/// Holds a prediction only until its latency-shifted target arrives, so the
/// memory footprint depends on the largest offset, not the sequence length.
/// Produces exactly the values of [`evaluate_sequence`].
pub struct StreamingEvaluator {
    offsets: Vec<usize>,
    next: usize,
    pending: BTreeMap<usize, Vec<(usize, Arc<ScoreMap>)>>,
    jobs: Vec<Job>,
    agnostic: Vec<Option<FrameMetrics>>,
    aware: Vec<Option<FrameMetrics>>,
    batch: usize,
}

impl StreamingEvaluator {
    pub fn new(profile: &LatencyProfile, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptySequence);
        }
        let offsets = profile.offsets(frames)?;
        Ok(Self {
            offsets,
            next: 0,
            pending: BTreeMap::new(),
            jobs: Vec::new(),
            agnostic: vec![None; frames],
            aware: vec![None; frames],
            batch: (rayon::current_num_threads() * 4).max(8),
        })
    }

    /// Feeds the next frame's prediction and ground-truth mask.
    pub fn push(&mut self, scores: ScoreMap, mask: LabelMask) -> Result<()> {
        let t = self.next;
        let n = self.offsets.len();
        if t >= n {
            return Err(Error::LengthMismatch {
                scores: t + 1,
                frames: n,
            });
        }
        self.next += 1;
        let scores = Arc::new(scores);
        let mask = Arc::new(mask);
        self.jobs.push(Job {
            slot: Slot::Agnostic(t),
            scores: Arc::clone(&scores),
            mask: Arc::clone(&mask),
        });
        if let Some(target) = t.checked_add(self.offsets[t]).filter(|&x| x < n) {
            self.pending.entry(target).or_default().push((t, scores));
        }
        if let Some(waiting) = self.pending.remove(&t) {
            for (source, s) in waiting {
                self.jobs.push(Job {
                    slot: Slot::Aware(source),
                    scores: s,
                    mask: Arc::clone(&mask),
                });
            }
        }
        if self.jobs.len() >= self.batch {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let jobs = std::mem::take(&mut self.jobs);
        let results = jobs
            .par_iter()
            .map(|j| frame_metrics(&j.scores, &j.mask))
            .collect::<Result<Vec<_>>>()?;
        for (job, m) in jobs.iter().zip(results) {
            match job.slot {
                Slot::Agnostic(t) => self.agnostic[t] = Some(m),
                Slot::Aware(t) => self.aware[t] = Some(m),
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<SequenceMetrics> {
        let n = self.offsets.len();
        if self.next != n {
            return Err(Error::LengthMismatch {
                scores: self.next,
                frames: n,
            });
        }
        self.flush()?;
        let agnostic: Vec<FrameMetrics> = self.agnostic.into_iter().flatten().collect();
        let aware: Vec<FrameMetrics> = self.aware.into_iter().flatten().collect();
        if aware.is_empty() {
            return Err(Error::NothingToEvaluate);
        }
        let latency_aware = aggregate(&aware);
        Ok(SequenceMetrics {
            latency_agnostic: aggregate(&agnostic),
            frames_evaluated: aware.len() - latency_aware.skipped_degenerate,
            frames_skipped_degenerate: latency_aware.skipped_degenerate,
            latency_aware,
            delta_frames_used: self.offsets,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_frames: usize,
    pub metrics: MeanMetrics,
}

/// Latency-aware metrics of the oracle method (score map = ground truth) at
/// each fixed frame offset.
pub fn oracle_sweep(gt: &[GroundTruthFrame], latencies: &[usize]) -> Result<Vec<SweepRow>> {
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(&delta) = latencies.iter().max() {
        if delta >= gt.len() {
            return Err(Error::LatencyExceedsSequence {
                delta,
                needed: delta + 1,
                frames: gt.len(),
            });
        }
    }
    latencies
        .iter()
        .map(|&delta| {
            let per_frame = (0..gt.len() - delta)
                .into_par_iter()
                .map(|t| frame_metrics(&ScoreMap::from(&gt[t].mask), &gt[t + delta].mask))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                delta_frames: delta,
                metrics: aggregate(&per_frame),
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot-ready CSV: `delta_frames,auroc,auprc,fpr95`, empty cells for undefined.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta_frames", "auroc", "auprc", "fpr95"])?;
    for row in rows {
        w.write_record([
            row.delta_frames.to_string(),
            fmt_opt(row.metrics.auroc),
            fmt_opt(row.metrics.auprc),
            fmt_opt(row.metrics.fpr_at_95),
        ])?;
    }
    w.flush()?;
    Ok(())
}
