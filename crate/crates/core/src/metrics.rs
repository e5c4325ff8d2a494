//! Exact per-frame ranking metrics: AUROC, average precision and FPR at 95% TPR.
//!
//! All three come from one descending sweep over tie groups, so equal scores
//! always move together across a threshold and results do not depend on pixel
//! order. A metric is `None` when its class condition is degenerate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Field, Result};
use crate::raster::{LabelMask, ScoreMap};

/// TPR level used by FPR@95 and by mask binarization.
pub const TPR_95: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub fpr_at_95: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auroc,
    Auprc,
    Fpr95,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Auroc, MetricKind::Auprc, MetricKind::Fpr95];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auroc => "auroc",
            MetricKind::Auprc => "auprc",
            MetricKind::Fpr95 => "fpr95",
        }
    }

    pub fn of(self, m: &FrameMetrics) -> Option<f64> {
        match self {
            MetricKind::Auroc => m.auroc,
            MetricKind::Auprc => m.auprc,
            MetricKind::Fpr95 => m.fpr_at_95,
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auroc" => Ok(MetricKind::Auroc),
            "auprc" | "ap" => Ok(MetricKind::Auprc),
            "fpr95" | "fpr@95" | "fpr_at_95" => Ok(MetricKind::Fpr95),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TieGroup {
    score: f32,
    pos: u64,
    neg: u64,
}

/// Tie groups in descending score order.
#[derive(Debug)]
struct RankCurve {
    groups: Vec<TieGroup>,
    positives: u64,
    negatives: u64,
}

impl RankCurve {
    fn build(scores: &[f32], labels: &[u8]) -> Self {
        let mut pairs: Vec<(f32, bool)> = scores
            .iter()
            // -0.0 and 0.0 must land in the same group under total_cmp
            .map(|&s| s + 0.0)
            .zip(labels.iter().map(|&l| l != 0))
            .collect();
        pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

        let mut groups: Vec<TieGroup> = Vec::new();
        let mut positives = 0;
        for (score, is_pos) in pairs {
            positives += u64::from(is_pos);
            match groups.last_mut() {
                Some(g) if g.score == score => {
                    g.pos += u64::from(is_pos);
                    g.neg += u64::from(!is_pos);
                }
                _ => groups.push(TieGroup {
                    score,
                    pos: u64::from(is_pos),
                    neg: u64::from(!is_pos),
                }),
            }
        }
        let negatives = scores.len() as u64 - positives;
        Self {
            groups,
            positives,
            negatives,
        }
    }

    fn auroc(&self) -> Option<f64> {
        if self.positives == 0 || self.negatives == 0 {
            return None;
        }
        // Twice the Mann-Whitney U, kept integral so ties add exactly 1/2.
        let mut u2: u128 = 0;
        let mut neg_at_or_above: u64 = 0;
        for g in &self.groups {
            neg_at_or_above += g.neg;
            let neg_below = self.negatives - neg_at_or_above;
            u2 += g.pos as u128 * (2 * neg_below as u128 + g.neg as u128);
        }
        let denom = 2 * self.positives as u128 * self.negatives as u128;
        Some(u2 as f64 / denom as f64)
    }

    fn auprc(&self) -> Option<f64> {
        if self.positives == 0 {
            return None;
        }
        let p = self.positives as f64;
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut ap = 0.0;
        for g in &self.groups {
            tp += g.pos;
            fp += g.neg;
            if g.pos > 0 {
                ap += (g.pos as f64 / p) * (tp as f64 / (tp + fp) as f64);
            }
        }
        Some(ap)
    }

    /// First (highest) tie group whose cumulative TPR reaches `target`, with
    /// the cumulative false positives at that point.
    fn first_reaching(&self, target: f64) -> Option<(f32, u64)> {
        if self.positives == 0 {
            return None;
        }
        let p = self.positives as f64;
        let (mut tp, mut fp) = (0u64, 0u64);
        for g in &self.groups {
            tp += g.pos;
            fp += g.neg;
            if tp as f64 / p >= target {
                return Some((g.score, fp));
            }
        }
        None
    }

    fn fpr_at(&self, target: f64) -> Option<f64> {
        if self.negatives == 0 {
            return None;
        }
        self.first_reaching(target)
            .map(|(_, fp)| fp as f64 / self.negatives as f64)
    }
}

fn check_dims(scores: &ScoreMap, labels: &LabelMask) -> Result<()> {
    if scores.dims() != labels.dims() {
        return Err(Error::DimensionMismatch {
            field: Field::Score,
            expected: labels.dims(),
            found: scores.dims(),
        });
    }
    Ok(())
}

fn curve(scores: &ScoreMap, labels: &LabelMask) -> Result<RankCurve> {
    check_dims(scores, labels)?;
    Ok(RankCurve::build(scores.values(), labels.values()))
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(scores: &ScoreMap, labels: &LabelMask) -> Result<Option<f64>> {
    Ok(curve(scores, labels)?.auroc())
}

/// Average precision, `Σ (R_k − R_{k−1}) P_k` over descending tie-group thresholds.
pub fn auprc(scores: &ScoreMap, labels: &LabelMask) -> Result<Option<f64>> {
    Ok(curve(scores, labels)?.auprc())
}

/// False-positive rate at the largest threshold reaching TPR ≥ 0.95.
pub fn fpr_at_95(scores: &ScoreMap, labels: &LabelMask) -> Result<Option<f64>> {
    Ok(curve(scores, labels)?.fpr_at(TPR_95))
}

/// Largest threshold `τ` such that classifying `score >= τ` as anomalous
/// reaches at least `tpr_target` recall.
pub fn threshold_at_tpr(
    scores: &ScoreMap,
    labels: &LabelMask,
    tpr_target: f64,
) -> Result<Option<f32>> {
    assert!(
        tpr_target > 0.0 && tpr_target <= 1.0,
        "tpr_target must lie in (0, 1], got {tpr_target}"
    );
    Ok(curve(scores, labels)?
        .first_reaching(tpr_target)
        .map(|(score, _)| score))
}

/// All three metrics from a single sort.
pub fn frame_metrics(scores: &ScoreMap, labels: &LabelMask) -> Result<FrameMetrics> {
    let c = curve(scores, labels)?;
    Ok(FrameMetrics {
        auroc: c.auroc(),
        auprc: c.auprc(),
        fpr_at_95: c.fpr_at(TPR_95),
        positives: c.positives,
        negatives: c.negatives,
    })
}
