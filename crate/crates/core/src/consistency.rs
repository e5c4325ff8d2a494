//! Temporal consistency: agreement between a prediction carried forward by
//! scene geometry and the prediction actually made `Δt` later.
//!
//! Each frame's scores are binarized at the threshold reaching 95% TPR against
//! that frame's own ground truth. The mask at `t` is warped into the camera at
//! `t + Δt` and compared with the mask at `t + Δt` by IoU restricted to the
//! validly projected pixels. `Δt` is one second of wall time by default,
//! independent of the method's latency.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Field, Result};
use crate::metrics::{threshold_at_tpr, TPR_95};
use crate::raster::{CameraModel, DepthMap, GroundTruthFrame, LabelMask, Pose, ScoreMap};
use crate::reprojection::{warp_mask, WarpResult, DEFAULT_MAX_DEPTH};
use crate::streaming::ms_to_frames;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DeltaPolicy {
    /// Fixed wall-time gap.
    Seconds { seconds: f64 },
    /// Gap tied to the method's latency, in frames. Exploratory.
    MethodLatency { frames: usize },
}

impl DeltaPolicy {
    pub fn frames(&self, fps: f64) -> usize {
        match *self {
            DeltaPolicy::Seconds { seconds } => ms_to_frames(seconds * 1000.0, fps),
            DeltaPolicy::MethodLatency { frames } => frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub delta: DeltaPolicy,
    pub max_depth: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            delta: DeltaPolicy::Seconds { seconds: 1.0 },
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPositives,
    EmptyUnion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairIou {
    /// Frame index of the earlier frame.
    pub t: u32,
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub no_positives: usize,
    pub empty_union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub mean_iou: Option<f64>,
    pub delta_frames: usize,
    pub per_pair_iou: Vec<PairIou>,
    pub pairs_skipped: SkipCounts,
}

impl ConsistencyReport {
    fn from_pairs(delta_frames: usize, per_pair_iou: Vec<PairIou>) -> Self {
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut pairs_skipped = SkipCounts::default();
        for p in &per_pair_iou {
            match (p.iou, p.skipped) {
                (Some(v), _) => {
                    sum += v;
                    n += 1;
                }
                (None, Some(SkipReason::NoPositives)) => pairs_skipped.no_positives += 1,
                (None, _) => pairs_skipped.empty_union += 1,
            }
        }
        Self {
            mean_iou: (n > 0).then(|| sum / n as f64),
            delta_frames,
            per_pair_iou,
            pairs_skipped,
        }
    }

    /// Per-pair CSV: `t,iou,skipped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "iou", "skipped"])?;
        for p in &self.per_pair_iou {
            w.write_record([
                p.t.to_string(),
                p.iou.map(|v| v.to_string()).unwrap_or_default(),
                match p.skipped {
                    Some(SkipReason::NoPositives) => "no_positives".into(),
                    Some(SkipReason::EmptyUnion) => "empty_union".into(),
                    None => String::new(),
                },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thresholds `scores` at its own 95%-TPR cutoff. `None` if `gt` has no positives.
pub fn binarize(scores: &ScoreMap, gt: &LabelMask) -> Result<Option<LabelMask>> {
    let Some(tau) = threshold_at_tpr(scores, gt, TPR_95)? else {
        return Ok(None);
    };
    let values = scores.values().iter().map(|&s| u8::from(s >= tau)).collect();
    Ok(Some(LabelMask::from_raw(scores.width(), scores.height(), values)?))
}

/// Binary masks `S_t` and `S_{t+Δt}`, each thresholded against its own frame's
/// ground truth. `None` when either frame has no anomalous pixels.
pub fn binarize_pair(
    scores_t: &ScoreMap,
    scores_dt: &ScoreMap,
    gt_t: &LabelMask,
    gt_dt: &LabelMask,
) -> Result<Option<(LabelMask, LabelMask)>> {
    let a = binarize(scores_t, gt_t)?;
    let b = binarize(scores_dt, gt_dt)?;
    Ok(a.zip(b))
}

/// `#{P ∧ warped ∧ S_dt} / #{P ∧ (warped ∨ S_dt)}`, `None` for an empty union.
pub fn pair_iou(warp: &WarpResult, s_dt: &LabelMask) -> Result<Option<f64>> {
    if warp.valid.dims() != s_dt.dims() {
        return Err(Error::DimensionMismatch {
            field: Field::Mask,
            expected: warp.valid.dims(),
            found: s_dt.dims(),
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for ((&p, &a), &b) in warp
        .valid
        .values()
        .iter()
        .zip(warp.warped_mask.values())
        .zip(s_dt.values())
    {
        if p != 0 {
            inter += u64::from(a & b);
            union += u64::from(a | b);
        }
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

/// A frame reduced to what the consistency metric needs.
#[derive(Debug)]
struct Prepared {
    index: u32,
    mask: Option<LabelMask>,
    depth: DepthMap,
    pose: Pose,
}

fn prepare(scores: &ScoreMap, frame: &GroundTruthFrame) -> Result<Prepared> {
    let (depth, pose) = geometry(frame)?;
    Ok(Prepared {
        index: frame.index,
        mask: binarize(scores, &frame.mask)?,
        depth: depth.clone(),
        pose: *pose,
    })
}

fn geometry(frame: &GroundTruthFrame) -> Result<(&DepthMap, &Pose)> {
    let depth = frame.depth.as_ref().ok_or(Error::MissingGeometry {
        frame: frame.index,
        channel: "depth",
    })?;
    let pose = frame.pose.as_ref().ok_or(Error::MissingGeometry {
        frame: frame.index,
        channel: "pose",
    })?;
    Ok((depth, pose))
}

fn evaluate_pair(
    a: &Prepared,
    b: &Prepared,
    cam: &CameraModel,
    max_depth: f64,
) -> Result<PairIou> {
    let (Some(sa), Some(sb)) = (&a.mask, &b.mask) else {
        return Ok(PairIou {
            t: a.index,
            iou: None,
            skipped: Some(SkipReason::NoPositives),
        });
    };
    let warp = warp_mask(sa, &a.depth, &a.pose, &b.depth, &b.pose, cam, max_depth)?;
    let iou = pair_iou(&warp, sb)?;
    Ok(PairIou {
        t: a.index,
        iou,
        skipped: iou.is_none().then_some(SkipReason::EmptyUnion),
    })
}

fn check_length(frames: usize, delta: usize) -> Result<()> {
    if frames <= delta {
        return Err(Error::SequenceTooShort {
            frames,
            needed: delta,
        });
    }
    Ok(())
}

/// Mean pairwise IoU over `t = 1 … T − Δt`.
pub fn evaluate_consistency(
    scores: &[ScoreMap],
    gt: &[GroundTruthFrame],
    cam: &CameraModel,
    fps: f64,
    config: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    if scores.len() != gt.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            frames: gt.len(),
        });
    }
    for f in gt {
        geometry(f)?;
    }
    let delta = config.delta.frames(fps);
    check_length(gt.len(), delta)?;
    let prepared = scores
        .par_iter()
        .zip(gt.par_iter())
        .map(|(s, f)| prepare(s, f))
        .collect::<Result<Vec<_>>>()?;
    let pairs = (0..gt.len() - delta)
        .into_par_iter()
        .map(|t| evaluate_pair(&prepared[t], &prepared[t + delta], cam, config.max_depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport::from_pairs(delta, pairs))
}

/// Single-pass consistency evaluator holding a window of `Δt + 1` frames.
/// Produces exactly the values of [`evaluate_consistency`].
pub struct ConsistencyStream {
    cam: CameraModel,
    max_depth: f64,
    delta: usize,
    frames: usize,
    seen: usize,
    window: VecDeque<Arc<Prepared>>,
    ready: Vec<(Arc<Prepared>, Arc<Prepared>)>,
    done: Vec<PairIou>,
    batch: usize,
}

impl ConsistencyStream {
    pub fn new(cam: CameraModel, fps: f64, frames: usize, config: &ConsistencyConfig) -> Result<Self> {
        let delta = config.delta.frames(fps);
        check_length(frames, delta)?;
        Ok(Self {
            cam,
            max_depth: config.max_depth,
            delta,
            frames,
            seen: 0,
            window: VecDeque::with_capacity(delta + 1),
            ready: Vec::new(),
            done: Vec::with_capacity(frames - delta),
            batch: rayon::current_num_threads().max(2),
        })
    }

    pub fn delta_frames(&self) -> usize {
        self.delta
    }

    pub fn push(&mut self, scores: &ScoreMap, frame: &GroundTruthFrame) -> Result<()> {
        if self.seen >= self.frames {
            return Err(Error::LengthMismatch {
                scores: self.seen + 1,
                frames: self.frames,
            });
        }
        self.seen += 1;
        self.window.push_back(Arc::new(prepare(scores, frame)?));
        if self.window.len() > self.delta {
            let first = self.window.pop_front().expect("window is non-empty");
            let last = Arc::clone(self.window.back().unwrap_or(&first));
            self.ready.push((first, last));
        }
        if self.ready.len() >= self.batch {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let ready = std::mem::take(&mut self.ready);
        let results = ready
            .par_iter()
            .map(|(a, b)| evaluate_pair(a, b, &self.cam, self.max_depth))
            .collect::<Result<Vec<_>>>()?;
        self.done.extend(results);
        Ok(())
    }

    pub fn finish(mut self) -> Result<ConsistencyReport> {
        if self.seen != self.frames {
            return Err(Error::LengthMismatch {
                scores: self.seen,
                frames: self.frames,
            });
        }
        self.flush()?;
        Ok(ConsistencyReport::from_pairs(self.delta, self.done))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(values: &[u8], w: u32) -> LabelMask {
        LabelMask::new(w, values.len() as u32 / w, values.to_vec()).unwrap()
    }

    fn warp_of(warped: &[u8], valid: &[u8], w: u32) -> WarpResult {
        WarpResult {
            warped_mask: mask(warped, w),
            valid: mask(valid, w),
            stats: Default::default(),
        }
    }

    #[test]
    fn binarize_oracle_recovers_gt() {
        let gt = mask(&[0, 1, 1, 0, 0, 1], 3);
        let s = ScoreMap::from(&gt);
        let (a, b) = binarize_pair(&s, &s, &gt, &gt).unwrap().unwrap();
        assert_eq!(a, gt);
        assert_eq!(b, gt);
    }

    #[test]
    fn binarize_all_normal_is_undefined() {
        let gt = mask(&[0, 1, 1, 0], 2);
        let empty = LabelMask::zeros(2, 2);
        let s = ScoreMap::from(&gt);
        assert!(binarize_pair(&s, &s, &gt, &empty).unwrap().is_none());
        assert!(binarize_pair(&s, &s, &empty, &gt).unwrap().is_none());
    }

    #[test]
    fn binarize_keeps_95_percent_of_positives() {
        let n = 400u32;
        let gt: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let scores: Vec<f32> = gt
            .iter()
            .enumerate()
            .map(|(i, &g)| g as f32 + ((i * 7919 % 101) as f32 / 101.0 - 0.5) * 0.8)
            .collect();
        let gt = mask(&gt, n);
        let s = ScoreMap::new(n, 1, scores).unwrap();
        let b = binarize(&s, &gt).unwrap().unwrap();
        let pos = gt.values().iter().filter(|&&v| v == 1).count();
        let kept = gt
            .values()
            .iter()
            .zip(b.values())
            .filter(|(&g, &s)| g == 1 && s == 1)
            .count();
        assert!(kept as f64 >= 0.95 * pos as f64);
    }

    #[test]
    fn iou_examples() {
        let w = warp_of(&[1, 1, 0, 0], &[1, 1, 1, 1], 4);
        assert_eq!(pair_iou(&w, &mask(&[1, 1, 0, 0], 4)).unwrap(), Some(1.0));
        assert_eq!(pair_iou(&w, &mask(&[0, 0, 1, 1], 4)).unwrap(), Some(0.0));
        let none = warp_of(&[0, 0, 0, 0], &[0, 0, 0, 0], 4);
        assert_eq!(pair_iou(&none, &mask(&[1, 1, 1, 1], 4)).unwrap(), None);
        // invalid pixels are ignored on both sides
        let w = warp_of(&[1, 1, 0, 0], &[1, 0, 1, 0], 4);
        assert_eq!(pair_iou(&w, &mask(&[1, 0, 0, 1], 4)).unwrap(), Some(1.0));
    }

    #[test]
    fn iou_is_symmetric() {
        let valid = [1, 1, 1, 0, 1, 1, 0, 1];
        let a = [1, 0, 1, 1, 0, 1, 1, 0];
        let b = [1, 1, 0, 0, 0, 1, 1, 1];
        let ab = pair_iou(&warp_of(&a, &valid, 8), &mask(&b, 8)).unwrap();
        let ba = pair_iou(&warp_of(&b, &valid, 8), &mask(&a, 8)).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.unwrap() >= 0.0 && ab.unwrap() <= 1.0);
    }

    #[test]
    fn missing_geometry_is_refused() {
        let gt = mask(&[0, 1], 2);
        let frames = vec![GroundTruthFrame::new(1, 1.0, gt.clone()), GroundTruthFrame::new(2, 1.0, gt.clone())];
        let scores = vec![ScoreMap::from(&gt), ScoreMap::from(&gt)];
        let cam = CameraModel::new(1.0, 1.0, 0.5, 0.0).unwrap();
        let cfg = ConsistencyConfig {
            delta: DeltaPolicy::MethodLatency { frames: 1 },
            ..Default::default()
        };
        assert!(matches!(
            evaluate_consistency(&scores, &frames, &cam, 1.0, &cfg),
            Err(Error::MissingGeometry { frame: 1, channel: "depth" })
        ));
    }

    #[test]
    fn too_short() {
        let cfg = ConsistencyConfig::default();
        let cam = CameraModel::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            ConsistencyStream::new(cam, 60.0, 60, &cfg),
            Err(Error::SequenceTooShort { .. })
        ));
        assert_eq!(DeltaPolicy::Seconds { seconds: 0.5 }.frames(60.0), 30);
        assert_eq!(DeltaPolicy::Seconds { seconds: 1.0 }.frames(60.0), 60);
    }
}
