//! Machine- and human-readable evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::consistency::{ConsistencyReport, SkipCounts};
use crate::error::Result;
use crate::metrics::MetricKind;
use crate::streaming::{MeanMetrics, SequenceMetrics};

pub const TOOL_NAME: &str = "streamseg";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Means of the selected metrics, keyed by metric name. `null` marks a metric
/// that was requested but undefined on every frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub values: BTreeMap<MetricKind, Option<f64>>,
    pub frames: BTreeMap<MetricKind, usize>,
}

impl MetricBlock {
    pub fn select(m: &MeanMetrics, metrics: &[MetricKind]) -> Self {
        let mut block = Self::default();
        for &k in metrics {
            block.values.insert(k, m.get(k));
            block.frames.insert(k, m.frames(k));
        }
        block
    }

    pub fn get(&self, k: MetricKind) -> Option<f64> {
        self.values.get(&k).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub mean_iou: Option<f64>,
    pub delta_frames: usize,
    pub pairs_evaluated: usize,
    pub pairs_skipped: SkipCounts,
}

impl From<&ConsistencyReport> for ConsistencySummary {
    fn from(r: &ConsistencyReport) -> Self {
        Self {
            mean_iou: r.mean_iou,
            delta_frames: r.delta_frames,
            pairs_evaluated: r.per_pair_iou.iter().filter(|p| p.iou.is_some()).count(),
            pairs_skipped: r.pairs_skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence_id: String,
    pub method_id: String,
    pub frames: usize,
    pub inference_ms_mean: f64,
    pub latency_agnostic: MetricBlock,
    pub latency_aware: MetricBlock,
    pub frames_evaluated: usize,
    pub frames_skipped_degenerate: usize,
    pub delta_frames_used: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencySummary>,
}

impl SequenceReport {
    pub fn new(
        sequence_id: &str,
        method_id: &str,
        metrics: &SequenceMetrics,
        selected: &[MetricKind],
        inference_ms_mean: f64,
        consistency: Option<&ConsistencyReport>,
    ) -> Self {
        Self {
            sequence_id: sequence_id.to_string(),
            method_id: method_id.to_string(),
            frames: metrics.delta_frames_used.len(),
            inference_ms_mean,
            latency_agnostic: MetricBlock::select(&metrics.latency_agnostic, selected),
            latency_aware: MetricBlock::select(&metrics.latency_aware, selected),
            frames_evaluated: metrics.frames_evaluated,
            frames_skipped_degenerate: metrics.frames_skipped_degenerate,
            delta_frames_used: metrics.delta_frames_used.clone(),
            consistency: consistency.map(ConsistencySummary::from),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub latency_agnostic: BTreeMap<MetricKind, Option<f64>>,
    pub latency_aware: BTreeMap<MetricKind, Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_iou: Option<f64>,
    pub inference_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tool: String,
    pub version: String,
    /// Effective configuration, enough to reproduce the report.
    pub config: serde_json::Value,
    pub metrics: Vec<MetricKind>,
    pub sequences: Vec<SequenceReport>,
    /// Unweighted means over sequences.
    pub aggregate: Aggregate,
    /// False when some requested metric was not computed on any frame.
    pub conformant: bool,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn new(config: serde_json::Value, metrics: Vec<MetricKind>, sequences: Vec<SequenceReport>) -> Self {
        let mut aggregate = Aggregate::default();
        for &k in &metrics {
            aggregate
                .latency_agnostic
                .insert(k, mean(sequences.iter().map(|s| s.latency_agnostic.get(k))));
            aggregate
                .latency_aware
                .insert(k, mean(sequences.iter().map(|s| s.latency_aware.get(k))));
        }
        aggregate.consistency_iou = mean(
            sequences
                .iter()
                .filter_map(|s| s.consistency.as_ref())
                .map(|c| c.mean_iou),
        );
        aggregate.inference_ms_mean = mean(sequences.iter().map(|s| Some(s.inference_ms_mean)));
        let conformant = !sequences.is_empty()
            && sequences.iter().all(|s| {
                metrics.iter().all(|&k| {
                    s.latency_agnostic.get(k).is_some() && s.latency_aware.get(k).is_some()
                })
            });
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config,
            metrics,
            sequences,
            aggregate,
            conformant,
        }
    }

    /// Merges several reports into one, recomputing the aggregate.
    pub fn merge(reports: Vec<MetricReport>) -> Self {
        let mut metrics: Vec<MetricKind> = Vec::new();
        let mut configs = Vec::new();
        let mut sequences = Vec::new();
        for r in reports {
            for k in r.metrics {
                if !metrics.contains(&k) {
                    metrics.push(k);
                }
            }
            configs.push(r.config);
            sequences.extend(r.sequences);
        }
        metrics.sort();
        Self::new(serde_json::Value::Array(configs), metrics, sequences)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per sequence plus an aggregate row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sequence".to_string(), "method".to_string()];
        for prefix in ["agnostic", "aware"] {
            header.extend(self.metrics.iter().map(|k| format!("{prefix}_{}", k.name())));
        }
        header.extend(["consistency_iou".into(), "inference_ms".into()]);
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.sequences {
            let mut row = vec![s.sequence_id.clone(), s.method_id.clone()];
            row.extend(self.metrics.iter().map(|&k| cell(s.latency_agnostic.get(k))));
            row.extend(self.metrics.iter().map(|&k| cell(s.latency_aware.get(k))));
            row.push(cell(s.consistency.as_ref().and_then(|c| c.mean_iou)));
            row.push(s.inference_ms_mean.to_string());
            w.write_record(&row)?;
        }
        let a = &self.aggregate;
        let mut row = vec!["*".to_string(), "*".to_string()];
        row.extend(self.metrics.iter().map(|k| cell(a.latency_agnostic.get(k).copied().flatten())));
        row.extend(self.metrics.iter().map(|k| cell(a.latency_aware.get(k).copied().flatten())));
        row.push(cell(a.consistency_iou));
        row.push(cell(a.inference_ms_mean));
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }

    /// Console table grouped as agnostic | aware | consistency | inference time,
    /// values in percent.
    pub fn render_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", x * 100.0));
        let labels: Vec<&str> = self
            .metrics
            .iter()
            .map(|k| match k {
                MetricKind::Auroc => "AUROC",
                MetricKind::Auprc => "AUPRC",
                MetricKind::Fpr95 => "FPR@95",
            })
            .collect();
        let mut header = vec!["Sequence".to_string(), "Method".to_string()];
        header.extend(labels.iter().map(|l| format!("{l} (agn)")));
        header.extend(labels.iter().map(|l| format!("{l} (aware)")));
        header.extend(["TC IoU".to_string(), "ms/frame".to_string()]);

        let mut rows = vec![header];
        let mut push = |id: &str, method: &str, agn: Vec<Option<f64>>, aware: Vec<Option<f64>>, tc: Option<f64>, ms: Option<f64>| {
            let mut row = vec![id.to_string(), method.to_string()];
            row.extend(agn.into_iter().map(pct));
            row.extend(aware.into_iter().map(pct));
            row.push(pct(tc));
            row.push(ms.map_or("-".to_string(), |x| format!("{x:.1}")));
            rows.push(row);
        };
        for s in &self.sequences {
            push(
                &s.sequence_id,
                &s.method_id,
                self.metrics.iter().map(|&k| s.latency_agnostic.get(k)).collect(),
                self.metrics.iter().map(|&k| s.latency_aware.get(k)).collect(),
                s.consistency.as_ref().and_then(|c| c.mean_iou),
                Some(s.inference_ms_mean),
            );
        }
        if self.sequences.len() > 1 {
            let a = &self.aggregate;
            push(
                "mean",
                "",
                self.metrics.iter().map(|k| a.latency_agnostic.get(k).copied().flatten()).collect(),
                self.metrics.iter().map(|k| a.latency_aware.get(k).copied().flatten()).collect(),
                a.consistency_iou,
                a.inference_ms_mean,
            );
        }

        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
            }
        }
        out
    }
}
