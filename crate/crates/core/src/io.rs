//! On-disk formats and streaming sequence access.
//!
//! Raster layout (all integers little-endian):
//!
//! ```text
//! magic[4]   "MASK" | "DPTH" | "SCOR"
//! width      u32
//! height     u32
//! payload    row-major; masks one byte per pixel (0 or 255),
//!            depth and scores IEEE-754 f32
//! ```
//!
//! A sequence directory holds `manifest.json`, `masks/%06d.mask`,
//! `depth/%06d.dpth`, `poses.txt`, and optionally `scores/<method>/%06d.scor`
//! and `timing/<method>.csv`. Frame indices start at 1.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CameraModel, DepthMap, GroundTruthFrame, LabelMask, Pose, ScoreMap};

pub const HEADER_LEN: usize = 12;
/// Largest raster accepted by readers, in pixels.
pub const MAX_PIXELS: u64 = 1 << 30;

/// A raster type with a binary encoding.
pub trait RasterFormat: Sized {
    const MAGIC: [u8; 4];
    const BYTES_PER_PIXEL: usize;

    fn dims(&self) -> (u32, u32);
    fn encode_payload(&self, out: &mut Vec<u8>);
    fn decode_payload(width: u32, height: u32, payload: &[u8]) -> Result<Self>;
}

impl RasterFormat for LabelMask {
    const MAGIC: [u8; 4] = *b"MASK";
    const BYTES_PER_PIXEL: usize = 1;

    fn dims(&self) -> (u32, u32) {
        LabelMask::dims(self)
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        out.extend(self.values().iter().map(|&v| if v != 0 { 255 } else { 0 }));
    }

    fn decode_payload(width: u32, height: u32, payload: &[u8]) -> Result<Self> {
        let values = payload
            .iter()
            .enumerate()
            .map(|(index, &b)| match b {
                0 => Ok(0),
                1 | 255 => Ok(1),
                value => Err(Error::NonBinaryLabel { index, value }),
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelMask::new(width, height, values)
    }
}

fn encode_f32(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_f32(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

impl RasterFormat for DepthMap {
    const MAGIC: [u8; 4] = *b"DPTH";
    const BYTES_PER_PIXEL: usize = 4;

    fn dims(&self) -> (u32, u32) {
        DepthMap::dims(self)
    }
    fn encode_payload(&self, out: &mut Vec<u8>) {
        encode_f32(self.values(), out)
    }
    fn decode_payload(width: u32, height: u32, payload: &[u8]) -> Result<Self> {
        DepthMap::new(width, height, decode_f32(payload))
    }
}

impl RasterFormat for ScoreMap {
    const MAGIC: [u8; 4] = *b"SCOR";
    const BYTES_PER_PIXEL: usize = 4;

    fn dims(&self) -> (u32, u32) {
        ScoreMap::dims(self)
    }
    fn encode_payload(&self, out: &mut Vec<u8>) {
        encode_f32(self.values(), out)
    }
    fn decode_payload(width: u32, height: u32, payload: &[u8]) -> Result<Self> {
        ScoreMap::new(width, height, decode_f32(payload))
    }
}

pub fn encode_raster<R: RasterFormat>(raster: &R) -> Vec<u8> {
    let (w, h) = raster.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + (w as usize * h as usize) * R::BYTES_PER_PIXEL);
    out.extend_from_slice(&R::MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    raster.encode_payload(&mut out);
    out
}

/// Reads up to `n` bytes, stopping early only at end of stream.
fn read_up_to<Rd: Read>(reader: &mut Rd, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(n.min(1 << 24));
    reader.take(n as u64).read_to_end(&mut buf)?;
    Ok(buf)
}

fn magic_str(m: &[u8]) -> String {
    String::from_utf8_lossy(m).into_owned()
}

/// Decodes one raster from a stream, consuming exactly its bytes.
pub fn decode_raster<R: RasterFormat, Rd: Read>(reader: &mut Rd) -> Result<R> {
    let header = read_up_to(reader, HEADER_LEN)?;
    if header.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: header.len(),
        });
    }
    if header[..4] != R::MAGIC {
        return Err(Error::BadMagic {
            expected: magic_str(&R::MAGIC),
            found: magic_str(&header[..4]),
        });
    }
    if header.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: header.len(),
        });
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let pixels = width as u64 * height as u64;
    if pixels > MAX_PIXELS {
        return Err(Error::DimensionOverflow { width, height });
    }
    let expected = pixels as usize * R::BYTES_PER_PIXEL;
    let payload = read_up_to(reader, expected)?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    R::decode_payload(width, height, &payload)
}

pub fn write_raster<R: RasterFormat>(path: &Path, raster: &R) -> Result<()> {
    fs::write(path, encode_raster(raster))?;
    Ok(())
}

pub fn read_raster<R: RasterFormat>(path: &Path) -> Result<R> {
    let mut reader = BufReader::new(File::open(path)?);
    let raster = decode_raster(&mut reader)?;
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(Error::TrailingBytes(path.to_path_buf()));
    }
    Ok(raster)
}

/// Tolerance beyond which a stored rotation triggers a warning.
pub const POSE_WARN_TOLERANCE: f64 = 1e-5;

/// `index r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2`.
pub fn format_pose_line(index: u32, pose: &Pose) -> String {
    let mut line = index.to_string();
    for (row, t) in pose.rotation.iter().zip(pose.translation) {
        for v in row.iter().chain(std::iter::once(&t)) {
            line.push(' ');
            line.push_str(&v.to_string());
        }
    }
    line
}

/// Parses one pose line. Returns a warning when the rotation is not
/// orthonormal within [`POSE_WARN_TOLERANCE`].
pub fn parse_pose_line(line_no: usize, line: &str) -> Result<(u32, Pose, Option<String>)> {
    let malformed = |reason: String| Error::MalformedPose {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 13 {
        return Err(malformed(format!("expected 13 fields, found {}", fields.len())));
    }
    let index: u32 = fields[0]
        .parse()
        .map_err(|_| malformed(format!("bad frame index {:?}", fields[0])))?;
    let mut v = [0.0f64; 12];
    for (slot, text) in v.iter_mut().zip(&fields[1..]) {
        *slot = text
            .parse()
            .map_err(|_| malformed(format!("bad number {text:?}")))?;
        if !slot.is_finite() {
            return Err(malformed(format!("non-finite value {text:?}")));
        }
    }
    let pose = Pose {
        rotation: [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
        translation: [v[3], v[7], v[11]],
    };
    let warning = pose
        .check_rotation(POSE_WARN_TOLERANCE)
        .err()
        .map(|e| format!("pose line {line_no} (frame {index}): {e}"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok((index, pose, warning))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub poses: Vec<Pose>,
    pub warnings: Vec<String>,
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, pose) in poses.iter().enumerate() {
        writeln!(w, "{}", format_pose_line(i as u32 + 1, pose))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<PoseTrack> {
    let mut poses = Vec::new();
    let mut warnings = Vec::new();
    for item in PoseLines::open(path)? {
        let (_, pose, warning) = item?;
        poses.push(pose);
        warnings.extend(warning);
    }
    Ok(PoseTrack { poses, warnings })
}

/// Lazily parsed pose file; indices must run 1, 2, 3, ...
pub struct PoseLines {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    expected: u32,
}

impl PoseLines {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            lines: BufReader::new(File::open(path)?).lines(),
            line_no: 0,
            expected: 1,
        })
    }
}

impl Iterator for PoseLines {
    type Item = Result<(u32, Pose, Option<String>)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_pose_line(self.line_no, &line).and_then(|(index, pose, w)| {
                if index != self.expected {
                    return Err(Error::MalformedPose {
                        line: self.line_no,
                        reason: format!("expected frame {}, found {index}", self.expected),
                    });
                }
                Ok((index, pose, w))
            });
            self.expected += 1;
            return Some(parsed);
        }
    }
}

pub const SCHEMA_VERSION: u32 = 1;

pub const CHANNEL_MASK: &str = "mask";
pub const CHANNEL_DEPTH: &str = "depth";
pub const CHANNEL_POSE: &str = "pose";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub schema_version: u32,
    pub sequence_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    /// Channel name → path relative to the manifest. Per-frame channels use a
    /// `%06d` placeholder for the frame index.
    pub channels: BTreeMap<String, String>,
    pub intrinsics: CameraModel,
}

impl SequenceManifest {
    /// Manifest with the standard channel layout.
    pub fn standard(
        sequence_id: impl Into<String>,
        fps: f64,
        width: u32,
        height: u32,
        frame_count: u32,
        intrinsics: CameraModel,
        with_geometry: bool,
    ) -> Self {
        let mut channels = BTreeMap::new();
        channels.insert(CHANNEL_MASK.to_string(), "masks/%06d.mask".to_string());
        if with_geometry {
            channels.insert(CHANNEL_DEPTH.to_string(), "depth/%06d.dpth".to_string());
            channels.insert(CHANNEL_POSE.to_string(), "poses.txt".to_string());
        }
        Self {
            schema_version: SCHEMA_VERSION,
            sequence_id: sequence_id.into(),
            fps,
            width,
            height,
            frame_count,
            channels,
            intrinsics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.frame_count < 1 {
            return Err(Error::Manifest("frame_count must be at least 1".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Manifest(format!("fps must be positive, got {}", self.fps)));
        }
        if !self.channels.contains_key(CHANNEL_MASK) {
            return Err(Error::Manifest("missing mask channel".into()));
        }
        if self.has_channel(CHANNEL_DEPTH) != self.has_channel(CHANNEL_POSE) {
            return Err(Error::Manifest("depth and pose channels must come together".into()));
        }
        self.intrinsics
            .validate_for(self.width, self.height)
            .map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn has_geometry(&self) -> bool {
        self.has_channel(CHANNEL_DEPTH) && self.has_channel(CHANNEL_POSE)
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Expands the `%06d` placeholder.
pub fn frame_path(pattern: &str, index: u32) -> String {
    pattern.replace("%06d", &format!("{index:06}"))
}

pub fn score_path(scores_dir: &Path, index: u32) -> PathBuf {
    scores_dir.join(frame_path("%06d.scor", index))
}

pub fn write_scores(scores_dir: &Path, index: u32, scores: &ScoreMap) -> Result<()> {
    write_raster(&score_path(scores_dir, index), scores)
}

/// Reads the score file of frame `index`, naming the frame when it is absent.
pub fn read_scores(scores_dir: &Path, index: u32) -> Result<ScoreMap> {
    let path = score_path(scores_dir, index);
    if !path.is_file() {
        return Err(Error::MissingScore(index));
    }
    read_raster(&path)
}

/// Writes a sequence directory one frame at a time.
pub struct SequenceWriter {
    root: PathBuf,
    manifest: SequenceManifest,
    poses: Option<BufWriter<File>>,
    written: u32,
}

impl SequenceWriter {
    pub fn create(root: &Path, manifest: SequenceManifest) -> Result<Self> {
        manifest.validate()?;
        fs::create_dir_all(root)?;
        for pattern in manifest.channels.values() {
            if let Some(parent) = Path::new(&frame_path(pattern, 1)).parent() {
                fs::create_dir_all(root.join(parent))?;
            }
        }
        let poses = match manifest.channels.get(CHANNEL_POSE) {
            Some(p) => Some(BufWriter::new(File::create(root.join(p))?)),
            None => None,
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            poses,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &GroundTruthFrame) -> Result<()> {
        let index = self.written + 1;
        if frame.index != index {
            return Err(Error::Manifest(format!(
                "frames must be written in order: expected {index}, got {}",
                frame.index
            )));
        }
        crate::raster::validate_frame(frame, self.manifest.dims())?;
        let ch = &self.manifest.channels;
        write_raster(&self.root.join(frame_path(&ch[CHANNEL_MASK], index)), &frame.mask)?;
        if let Some(pattern) = ch.get(CHANNEL_DEPTH) {
            let depth = frame.depth.as_ref().ok_or(Error::MissingGeometry {
                frame: index,
                channel: "depth",
            })?;
            write_raster(&self.root.join(frame_path(pattern, index)), depth)?;
        }
        if let Some(w) = self.poses.as_mut() {
            let pose = frame.pose.as_ref().ok_or(Error::MissingGeometry {
                frame: index,
                channel: "pose",
            })?;
            writeln!(w, "{}", format_pose_line(index, pose))?;
        }
        self.written = index;
        Ok(())
    }

    pub fn finish(mut self) -> Result<SequenceManifest> {
        if self.written != self.manifest.frame_count {
            return Err(Error::Manifest(format!(
                "wrote {} frames, manifest declares {}",
                self.written, self.manifest.frame_count
            )));
        }
        if let Some(w) = self.poses.as_mut() {
            w.flush()?;
        }
        self.manifest.save(&self.root.join("manifest.json"))?;
        Ok(self.manifest)
    }
}

/// Streaming reader over a sequence directory. Yields frames in ascending
/// index order, reading each frame's files only when it is requested.
pub struct SequenceReader {
    root: PathBuf,
    manifest: SequenceManifest,
    poses: Option<PoseLines>,
    next: u32,
    scores_dir: Option<PathBuf>,
}

/// Opens the sequence described by `manifest_path` (or by the
/// `manifest.json` inside it, when given a directory).
pub fn open_sequence(manifest_path: &Path) -> Result<SequenceReader> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let manifest = SequenceManifest::load(&manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let poses = match manifest.channels.get(CHANNEL_POSE) {
        Some(rel) => {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(Error::MissingFile {
                    index: 1,
                    channel: CHANNEL_POSE.into(),
                    path,
                });
            }
            Some(PoseLines::open(&path)?)
        }
        None => None,
    };
    Ok(SequenceReader {
        root,
        manifest,
        poses,
        next: 1,
        scores_dir: None,
    })
}

impl SequenceReader {
    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Pairs every frame with the score map stored in `scores_dir`.
    pub fn with_scores(mut self, scores_dir: impl Into<PathBuf>) -> Self {
        self.scores_dir = Some(scores_dir.into());
        self
    }

    /// Skips depth and pose even when the sequence has them.
    pub fn without_geometry(mut self) -> Self {
        self.manifest.channels.remove(CHANNEL_DEPTH);
        self.manifest.channels.remove(CHANNEL_POSE);
        self.poses = None;
        self
    }

    fn channel_file(&self, channel: &str, index: u32) -> Result<PathBuf> {
        let path = self.root.join(frame_path(&self.manifest.channels[channel], index));
        if !path.is_file() {
            return Err(Error::MissingFile {
                index,
                channel: channel.into(),
                path,
            });
        }
        Ok(path)
    }

    fn read_frame(&mut self, index: u32) -> Result<(GroundTruthFrame, Option<ScoreMap>)> {
        let mask: LabelMask = read_raster(&self.channel_file(CHANNEL_MASK, index)?)?;
        let mut frame = GroundTruthFrame::new(index, self.manifest.fps, mask);
        if self.manifest.has_channel(CHANNEL_DEPTH) {
            frame.depth = Some(read_raster(&self.channel_file(CHANNEL_DEPTH, index)?)?);
        }
        if let Some(lines) = self.poses.as_mut() {
            match lines.next() {
                Some(Ok((_, pose, _))) => frame.pose = Some(pose),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(Error::MissingFile {
                        index,
                        channel: CHANNEL_POSE.into(),
                        path: self.root.join(&self.manifest.channels[CHANNEL_POSE]),
                    })
                }
            }
        }
        crate::raster::validate_frame(&frame, self.manifest.dims())?;
        let scores = match &self.scores_dir {
            Some(dir) => {
                let s = read_scores(dir, index)?;
                crate::raster::validate_scores(&s, self.manifest.dims())?;
                Some(s)
            }
            None => None,
        };
        Ok((frame, scores))
    }

    /// Iterator of `(frame, scores)`; scores are present iff
    /// [`SequenceReader::with_scores`] was called.
    pub fn frames_with_scores(self) -> FramesWithScores {
        FramesWithScores(self)
    }
}

impl Iterator for SequenceReader {
    type Item = Result<GroundTruthFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next > self.manifest.frame_count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        Some(self.read_frame(index).map(|(f, _)| f))
    }
}

pub struct FramesWithScores(SequenceReader);

impl Iterator for FramesWithScores {
    type Item = Result<(GroundTruthFrame, Option<ScoreMap>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let r = &mut self.0;
        if r.next > r.manifest.frame_count {
            return None;
        }
        let index = r.next;
        r.next += 1;
        Some(r.read_frame(index))
    }
}

/// `frame_index,inference_ms` rows.
pub fn write_timing_csv<W: Write>(rows: &[(u32, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame_index", "inference_ms"])?;
    for (index, ms) in rows {
        w.write_record([index.to_string(), ms.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TimingRow {
    frame_index: u32,
    inference_ms: f64,
}

pub fn read_timing_csv(path: &Path) -> Result<BTreeMap<u32, f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = BTreeMap::new();
    for row in reader.deserialize() {
        let row: TimingRow = row?;
        rows.insert(row.frame_index, row.inference_ms);
    }
    Ok(rows)
}
