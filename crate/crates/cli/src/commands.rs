use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use streamseg::consistency::{binarize, ConsistencyStream};
use streamseg::io::{
    self as sio, open_sequence, read_scores, write_raster, write_scores, write_timing_csv,
    SequenceWriter, CHANNEL_DEPTH, CHANNEL_POSE,
};
use streamseg::metrics::TPR_95;
use streamseg::raster::validate_scores;
use streamseg::report::{ConsistencySummary, SequenceReport, TOOL_NAME, TOOL_VERSION};
use streamseg::reprojection::{warp_mask, OCCLUSION_ABS_M, OCCLUSION_REL};
use streamseg::streaming::{ms_to_frames, oracle_sweep, write_sweep_csv, StreamingEvaluator};
use streamseg::synthgen::{manifest_for, render_frame, ScorerStream};
use streamseg::{
    count_positives, ConsistencyConfig, DeltaPolicy, Error, GroundTruthFrame, LatencyProfile,
    MetricKind, MetricReport, ReferenceScorer, SceneSpec,
};

use crate::source::{self, scorer_name};
use crate::{
    ConsistencyArgs, DeltaArgs, EvaluateArgs, GenArgs, NonConformant, OracleArgs, ReportArgs,
    UsageError, WarpArgs,
};

/// Frames rendered per parallel batch in `gen`.
const RENDER_BATCH: u32 = 32;

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError::new(msg).into()
}

fn require_geometry(manifest: &sio::SequenceManifest) -> Result<()> {
    for channel in [CHANNEL_DEPTH, CHANNEL_POSE] {
        if !manifest.has_channel(channel) {
            return Err(Error::MissingGeometry { frame: 1, channel })
                .with_context(|| format!("sequence {} cannot be warped", manifest.sequence_id));
        }
    }
    Ok(())
}

impl DeltaArgs {
    fn config(&self) -> Result<ConsistencyConfig> {
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return Err(usage(format!("--max-depth must be positive, got {}", self.max_depth)));
        }
        let delta = match self.delta_frames {
            Some(frames) => DeltaPolicy::MethodLatency { frames },
            None if self.delta_seconds >= 0.0 && self.delta_seconds.is_finite() => {
                DeltaPolicy::Seconds {
                    seconds: self.delta_seconds,
                }
            }
            None => {
                return Err(usage(format!(
                    "--delta-seconds must be non-negative, got {}",
                    self.delta_seconds
                )))
            }
        };
        Ok(ConsistencyConfig {
            delta,
            max_depth: self.max_depth,
        })
    }
}

fn consistency_echo(cfg: &ConsistencyConfig) -> serde_json::Value {
    json!({
        "delta": cfg.delta,
        "max_depth": cfg.max_depth,
        "occlusion_abs_m": OCCLUSION_ABS_M,
        "occlusion_rel": OCCLUSION_REL,
        "binarize_tpr": TPR_95,
    })
}

fn scene_spec(a: &GenArgs) -> Result<SceneSpec> {
    let mut spec = match &a.scene {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scene {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing scene {}", path.display()))?
        }
        None => SceneSpec::base(0),
    };
    if let Some(seed) = a.seed {
        spec.rng_seed = seed;
    }
    if let Some(v) = a.frames {
        spec.frame_count = v;
    }
    if let Some(v) = a.fps {
        spec.fps = v;
    }
    if let Some(v) = a.width {
        spec.width = v;
    }
    if let Some(v) = a.height {
        spec.height = v;
    }
    if let Some(v) = a.hfov {
        spec.hfov_degrees = v;
    }
    if let Some(v) = a.camera_height {
        spec.camera_height = v;
    }
    if let Some(v) = a.speed {
        spec.speed = v;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if a.scene.is_none() || a.anomalies.is_some() {
        spec = spec.with_random_anomalies(a.anomalies.unwrap_or(6));
    }
    if a.still {
        spec = spec.still();
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let spec = scene_spec(a)?;
    let mut manifest = manifest_for(&spec, &a.id);
    if a.no_geometry {
        manifest.channels.remove(CHANNEL_DEPTH);
        manifest.channels.remove(CHANNEL_POSE);
    }
    let mut writer = SequenceWriter::create(&a.out, manifest)?;
    let mut scorer = a.scorer.map(|kind| {
        let id = a.method_id.clone().unwrap_or_else(|| scorer_name(kind));
        let stream = ScorerStream::new(ReferenceScorer {
            kind,
            rng_seed: a.scorer_seed,
        });
        (a.out.join("scores").join(&id), a.out.join("timing").join(format!("{id}.csv")), stream)
    });
    if !(a.latency_ms >= 0.0 && a.latency_ms.is_finite()) {
        return Err(usage(format!("--latency-ms must be non-negative, got {}", a.latency_ms)));
    }
    if let Some((dir, _, _)) = &scorer {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut start = 1;
    while start <= spec.frame_count {
        let end = (start + RENDER_BATCH - 1).min(spec.frame_count);
        let frames: Vec<GroundTruthFrame> = (start..=end)
            .into_par_iter()
            .map(|i| render_frame(&spec, i))
            .collect();
        for frame in &frames {
            writer.write_frame(frame)?;
            if let Some((dir, _, stream)) = scorer.as_mut() {
                write_scores(dir, frame.index, &stream.score(frame))?;
            }
        }
        start = end + 1;
    }
    let manifest = writer.finish()?;
    write_file(
        &a.out.join("scene.json"),
        format!("{}\n", serde_json::to_string_pretty(&spec)?).as_bytes(),
    )?;
    if let Some((_, timing, _)) = &scorer {
        let rows: Vec<(u32, f64)> = (1..=spec.frame_count).map(|i| (i, a.latency_ms)).collect();
        let mut buf = Vec::new();
        write_timing_csv(&rows, &mut buf)?;
        write_file(timing, &buf)?;
    }
    println!(
        "{}",
        json!({
            "sequence_id": manifest.sequence_id,
            "frames": manifest.frame_count,
            "width": manifest.width,
            "height": manifest.height,
            "fps": manifest.fps,
            "anomalies": spec.anomalies.len(),
        })
    );
    Ok(())
}

fn evaluate_one(
    dir: &Path,
    a: &EvaluateArgs,
    metrics: &[MetricKind],
    consistency: Option<&ConsistencyConfig>,
) -> Result<SequenceReport> {
    let reader = open_sequence(dir).with_context(|| format!("opening {}", dir.display()))?;
    let manifest = reader.manifest().clone();
    let reader = match consistency {
        Some(_) => {
            require_geometry(&manifest)?;
            reader
        }
        None => reader.without_geometry(),
    };
    let out_root = a.out.as_ref().map(|o| o.join(&manifest.sequence_id));
    let prepared = source::prepare(&a.source, dir, &manifest, out_root.as_deref())?;
    let profile = match (a.latency_ms, prepared.latency) {
        (Some(ms), _) => LatencyProfile::fixed(ms, manifest.fps),
        (None, Some(p)) => Ok(p),
        (None, None) => LatencyProfile::fixed(0.0, manifest.fps),
    }?;
    let frames = manifest.frame_count as usize;
    let mut evaluator = StreamingEvaluator::new(&profile, frames)?;
    let mut tc = consistency
        .map(|c| ConsistencyStream::new(manifest.intrinsics, manifest.fps, frames, c))
        .transpose()?;
    let mut feed = prepared.feed;
    for frame in reader {
        let frame = frame?;
        let scores = feed
            .next(&frame)
            .with_context(|| format!("{}: frame {}", manifest.sequence_id, frame.index))?;
        validate_scores(&scores, manifest.dims())
            .with_context(|| format!("{}: frame {}", manifest.sequence_id, frame.index))?;
        if let Some(tc) = tc.as_mut() {
            tc.push(&scores, &frame)?;
        }
        evaluator.push(scores, frame.mask)?;
    }
    let sequence_metrics = evaluator
        .finish()
        .with_context(|| format!("evaluating {}", manifest.sequence_id))?;
    let consistency = tc.map(|t| t.finish()).transpose()?;
    if let (Some(root), Some(c)) = (&out_root, &consistency) {
        let mut buf = Vec::new();
        c.write_csv(&mut buf)?;
        write_file(&root.join("consistency_pairs.csv"), &buf)?;
    }
    Ok(SequenceReport::new(
        &manifest.sequence_id,
        &a.source.method_id(),
        &sequence_metrics,
        metrics,
        profile.mean_ms(),
        consistency.as_ref(),
    ))
}

fn emit_report(report: &MetricReport, out: Option<&Path>, json: bool) -> Result<()> {
    let text = report.to_json()?;
    if let Some(out) = out {
        write_file(&out.join("report.json"), text.as_bytes())?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write_file(&out.join("report.csv"), &csv)?;
    }
    let mut stdout = io::stdout().lock();
    if json {
        stdout.write_all(text.as_bytes())?;
    } else {
        stdout.write_all(report.render_table().as_bytes())?;
    }
    stdout.flush()?;
    Ok(())
}

fn check_conformant(report: &MetricReport) -> Result<()> {
    if report.conformant {
        return Ok(());
    }
    let missing: Vec<String> = report
        .sequences
        .iter()
        .flat_map(|s| {
            report.metrics.iter().filter_map(move |&k| {
                (s.latency_agnostic.get(k).is_none() || s.latency_aware.get(k).is_none())
                    .then(|| format!("{}/{}", s.sequence_id, k.name()))
            })
        })
        .collect();
    Err(NonConformant(format!("metrics not computed on any frame: {}", missing.join(", "))).into())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    a.source.check()?;
    let mut metrics = a.metrics.clone();
    metrics.sort();
    metrics.dedup();
    if let Some(ms) = a.latency_ms {
        if !(ms >= 0.0 && ms.is_finite()) {
            return Err(usage(format!("--latency-ms must be non-negative, got {ms}")));
        }
    }
    let consistency = a.consistency.then(|| a.delta.config()).transpose()?;
    let sequences = a
        .sequences
        .iter()
        .map(|dir| evaluate_one(dir, a, &metrics, consistency.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({
        "sequences": a.sequences.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "source": a.source.echo(),
        "latency_ms": a.latency_ms,
        "tpr_target": TPR_95,
        "consistency": consistency.as_ref().map(consistency_echo),
    });
    let report = MetricReport::new(config, metrics, sequences);
    emit_report(&report, a.out.as_deref(), a.json)?;
    check_conformant(&report)
}

pub fn consistency(a: &ConsistencyArgs) -> Result<()> {
    a.source.check()?;
    let cfg = a.delta.config()?;
    let reader =
        open_sequence(&a.sequence).with_context(|| format!("opening {}", a.sequence.display()))?;
    let manifest = reader.manifest().clone();
    require_geometry(&manifest)?;
    let prepared = source::prepare(&a.source, &a.sequence, &manifest, a.out.as_deref())?;
    let frames = manifest.frame_count as usize;
    let mut tc = ConsistencyStream::new(manifest.intrinsics, manifest.fps, frames, &cfg)?;
    let mut feed = prepared.feed;
    for frame in reader {
        let frame = frame?;
        let scores = feed.next(&frame)?;
        validate_scores(&scores, manifest.dims())
            .with_context(|| format!("frame {}", frame.index))?;
        tc.push(&scores, &frame)?;
    }
    let report = tc.finish()?;
    let summary = ConsistencySummary::from(&report);
    let body = json!({
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "sequence_id": manifest.sequence_id,
        "method_id": a.source.method_id(),
        "config": {
            "sequence": a.sequence.display().to_string(),
            "source": a.source.echo(),
            "consistency": consistency_echo(&cfg),
        },
        "mean_iou": summary.mean_iou,
        "delta_frames": summary.delta_frames,
        "pairs_evaluated": summary.pairs_evaluated,
        "pairs_skipped": summary.pairs_skipped,
    });
    let text = format!("{}\n", serde_json::to_string_pretty(&body)?);
    if let Some(out) = &a.out {
        write_file(&out.join("consistency.json"), text.as_bytes())?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write_file(&out.join("consistency_pairs.csv"), &csv)?;
    }
    io::stdout().lock().write_all(text.as_bytes())?;
    if summary.mean_iou.is_none() {
        return Err(NonConformant("no frame pair could be evaluated".into()).into());
    }
    Ok(())
}

pub fn oracle(a: &OracleArgs) -> Result<()> {
    let reader = open_sequence(&a.sequence)
        .with_context(|| format!("opening {}", a.sequence.display()))?
        .without_geometry();
    let fps = reader.manifest().fps;
    let latencies = match &a.latencies_ms {
        Some(ms) => ms
            .iter()
            .map(|&m| {
                if m >= 0.0 && m.is_finite() {
                    Ok(ms_to_frames(m, fps))
                } else {
                    Err(usage(format!("latency must be non-negative, got {m}")))
                }
            })
            .collect::<Result<Vec<_>>>()?,
        None => a.latencies.clone(),
    };
    let gt = reader.collect::<streamseg::Result<Vec<_>>>()?;
    let rows = oracle_sweep(&gt, &latencies)?;
    match &a.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            write_file(path, &buf)?;
        }
        None => write_sweep_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

pub fn warp(a: &WarpArgs) -> Result<()> {
    let reader =
        open_sequence(&a.sequence).with_context(|| format!("opening {}", a.sequence.display()))?;
    let manifest = reader.manifest().clone();
    require_geometry(&manifest)?;
    for index in [a.from, a.to] {
        if index == 0 || index > manifest.frame_count {
            return Err(usage(format!(
                "frame {index} outside 1..={}",
                manifest.frame_count
            )));
        }
    }
    let (mut src, mut dst) = (None, None);
    for frame in reader.take(a.from.max(a.to) as usize) {
        let frame = frame?;
        if frame.index == a.from {
            src = Some(frame.clone());
        }
        if frame.index == a.to {
            dst = Some(frame);
        }
    }
    let (src, dst) = (src.expect("frame read"), dst.expect("frame read"));
    let mask = match &a.scores {
        Some(dir) => {
            let scores = read_scores(dir, a.from)?;
            binarize(&scores, &src.mask)?.ok_or_else(|| {
                anyhow::anyhow!("frame {} has no anomalous pixels to binarize against", a.from)
            })?
        }
        None => src.mask.clone(),
    };
    let geometry = |f: &GroundTruthFrame| (f.depth.clone().expect("depth"), f.pose.expect("pose"));
    let (src_depth, src_pose) = geometry(&src);
    let (dst_depth, dst_pose) = geometry(&dst);
    let r = warp_mask(
        &mask,
        &src_depth,
        &src_pose,
        &dst_depth,
        &dst_pose,
        &manifest.intrinsics,
        a.max_depth,
    )?;
    let prefix = a.out.display().to_string();
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_raster(Path::new(&format!("{prefix}.warped.mask")), &r.warped_mask)?;
    write_raster(Path::new(&format!("{prefix}.valid.mask")), &r.valid)?;
    println!(
        "{}",
        json!({
            "from": a.from,
            "to": a.to,
            "source_positives": count_positives(&mask),
            "warped_positives": count_positives(&r.warped_mask),
            "valid_pixels": count_positives(&r.valid),
            "stats": r.stats,
        })
    );
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| -> Result<MetricReport> {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(io::BufReader::new(file))
                .with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = MetricReport::merge(reports);
    emit_report(&merged, a.out.as_deref(), a.json)?;
    check_conformant(&merged)
}
