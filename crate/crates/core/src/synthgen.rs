//! Procedural driving sequences with exact geometry, and reference scorers.
//!
//! The camera drives along the world +z axis at constant height above the
//! ground plane `y = 0` (world y points down, matching the camera frame, so
//! the camera sits at `y = -camera_height`). Depth comes from analytic ray
//! casting against the ground plane and axis-aligned cuboid anomalies; the
//! anomaly mask marks pixels whose first hit is a cuboid. Rays that miss
//! everything, or hit the ground beyond [`SKY_DEPTH`], get that finite
//! sentinel depth.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SequenceManifest;
use crate::raster::{CameraModel, DepthMap, GroundTruthFrame, LabelMask, Pose, ScoreMap};

/// Depth assigned to sky pixels, in meters.
pub const SKY_DEPTH: f64 = 1000.0;
pub const DEFAULT_HFOV_DEGREES: f64 = 90.0;

/// Axis-aligned box resting anywhere in the world, present from `spawn_frame` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub spawn_frame: u32,
}

impl Cuboid {
    /// A box standing on the ground whose near face is `distance` meters ahead
    /// of world z = `from_z`.
    pub fn on_ground(lateral: f64, from_z: f64, distance: f64, size: [f64; 3], spawn_frame: u32) -> Self {
        Self {
            center: [lateral, -size[1] / 2.0, from_z + distance + size[2] / 2.0],
            size,
            spawn_frame,
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.center[a] - self.size[a] / 2.0;
            hi[a] = self.center[a] + self.size[a] / 2.0;
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub fps: f64,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub hfov_degrees: f64,
    pub camera_height: f64,
    /// Forward speed in m/s.
    pub speed: f64,
    /// Range ahead of the camera in which random anomalies spawn, meters.
    pub anomaly_spawn_range: (f64, f64),
    pub anomalies: Vec<Cuboid>,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::base(0).with_random_anomalies(6)
    }
}

impl SceneSpec {
    /// Default geometry without anomalies.
    pub fn base(rng_seed: u64) -> Self {
        Self {
            fps: 60.0,
            frame_count: 600,
            width: 480,
            height: 270,
            hfov_degrees: DEFAULT_HFOV_DEGREES,
            camera_height: 1.5,
            speed: 10.0,
            anomaly_spawn_range: (10.0, 50.0),
            anomalies: Vec::new(),
            rng_seed,
        }
    }

    /// Replaces the anomaly list with `count` boxes spawned at evenly spaced
    /// frames, each placed inside the spawn range ahead of the camera and
    /// beside its path.
    pub fn with_random_anomalies(mut self, count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let (near, far) = self.anomaly_spawn_range;
        self.anomalies = (0..count)
            .map(|i| {
                let spawn_frame = 1 + (i as u64 * self.frame_count as u64 / count as u64) as u32;
                let distance = if far > near { rng.gen_range(near..=far) } else { near };
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let lateral = side * rng.gen_range(1.5..3.5);
                let size = [
                    rng.gen_range(0.6..1.6),
                    rng.gen_range(0.5..1.2),
                    rng.gen_range(0.6..1.6),
                ];
                let cam_z = self.camera_z(spawn_frame);
                Cuboid::on_ground(lateral, cam_z, distance, size, spawn_frame)
            })
            .collect();
        self
    }

    /// Stops the camera and makes every anomaly present from the first frame,
    /// so all frames are identical.
    pub fn still(mut self) -> Self {
        self.speed = 0.0;
        for a in &mut self.anomalies {
            a.spawn_frame = 1;
        }
        self
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.frame_count == 0 {
            return bad("frame_count must be at least 1".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty frames {}x{}", self.width, self.height));
        }
        if !(self.hfov_degrees > 0.0 && self.hfov_degrees < 180.0) {
            return bad(format!("hfov {} out of (0, 180)", self.hfov_degrees));
        }
        if !(self.camera_height > 0.0) || !self.speed.is_finite() {
            return bad("camera_height must be positive and speed finite".into());
        }
        let (near, far) = self.anomaly_spawn_range;
        if !(near > 0.0 && near <= far) {
            return bad(format!("spawn range ({near}, {far}) is not ordered"));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::from_hfov(self.width, self.height, self.hfov_degrees)
    }

    /// Camera world z at 1-based frame `index`.
    pub fn camera_z(&self, index: u32) -> f64 {
        self.speed * (index as f64 - 1.0) / self.fps
    }

    pub fn pose(&self, index: u32) -> Pose {
        Pose::from_translation([0.0, -self.camera_height, self.camera_z(index)])
    }
}

/// Ray/box slab test from the origin. Returns the entry distance along a ray
/// with unit z component, i.e. the z-depth of the hit.
fn ray_box(ray: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if ray[a] == 0.0 {
            if lo[a] > 0.0 || hi[a] < 0.0 {
                return None;
            }
            continue;
        }
        let (t1, t2) = (lo[a] / ray[a], hi[a] / ray[a]);
        let (t1, t2) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(t1);
        t_far = t_far.min(t2);
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

/// Analytic z-depth of the ground plane at image row `v`, before the sky cap.
pub fn ground_depth(spec: &SceneSpec, cam: &CameraModel, v: u32) -> Option<f64> {
    let dy = (v as f64 - cam.cy) / cam.fy;
    (dy > 0.0).then(|| spec.camera_height / dy)
}

/// Renders frame `index` (1-based).
pub fn render_frame(spec: &SceneSpec, index: u32) -> GroundTruthFrame {
    let cam = spec.camera();
    let (w, h) = (spec.width, spec.height);
    let pose = spec.pose(index);
    let origin = pose.translation;

    let mut depth = Vec::with_capacity(w as usize * h as usize);
    for v in 0..h {
        let d = ground_depth(spec, &cam, v).map_or(SKY_DEPTH, |d| d.min(SKY_DEPTH));
        depth.extend(std::iter::repeat(d).take(w as usize));
    }
    let mut mask = vec![0u8; depth.len()];

    for cuboid in spec.anomalies.iter().filter(|c| c.spawn_frame <= index) {
        let (wlo, whi) = cuboid.bounds();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = wlo[a] - origin[a];
            hi[a] = whi[a] - origin[a];
        }
        if hi[2] <= 0.0 {
            continue;
        }
        let (u0, u1, v0, v1) = screen_bounds(&cam, lo, hi, w, h);
        for v in v0..v1 {
            for u in u0..u1 {
                let i = v as usize * w as usize + u as usize;
                if let Some(t) = ray_box(cam.ray(u as f64, v as f64), lo, hi) {
                    if t < depth[i] {
                        depth[i] = t;
                        mask[i] = 1;
                    }
                }
            }
        }
    }

    let depth = DepthMap::from_raw(w, h, depth.into_iter().map(|d| d as f32).collect())
        .expect("dimensions are consistent");
    let mask = LabelMask::from_raw(w, h, mask).expect("dimensions are consistent");
    GroundTruthFrame::new(index, spec.fps, mask).with_geometry(depth, pose)
}

/// Pixel rectangle `[u0, u1) x [v0, v1)` covering a camera-frame box.
fn screen_bounds(cam: &CameraModel, lo: [f64; 3], hi: [f64; 3], w: u32, h: u32) -> (u32, u32, u32, u32) {
    if lo[2] <= 1e-6 {
        return (0, w, 0, h);
    }
    let (mut umin, mut umax, mut vmin, mut vmax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &x in &[lo[0], hi[0]] {
        for &y in &[lo[1], hi[1]] {
            for &z in &[lo[2], hi[2]] {
                let (u, v) = cam.project([x, y, z]).expect("in front of camera");
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
        }
    }
    let clamp = |x: f64, n: u32| x.max(0.0).min(n as f64) as u32;
    (
        clamp(umin.floor() - 1.0, w),
        clamp(umax.ceil() + 2.0, w),
        clamp(vmin.floor() - 1.0, h),
        clamp(vmax.ceil() + 2.0, h),
    )
}

/// Renders the whole sequence and its manifest.
pub fn generate(spec: &SceneSpec, sequence_id: &str) -> Result<(Vec<GroundTruthFrame>, SequenceManifest)> {
    spec.validate()?;
    let frames = (1..=spec.frame_count)
        .into_par_iter()
        .map(|i| render_frame(spec, i))
        .collect();
    Ok((frames, manifest_for(spec, sequence_id)))
}

pub fn manifest_for(spec: &SceneSpec, sequence_id: &str) -> SequenceManifest {
    SequenceManifest::standard(
        sequence_id,
        spec.fps,
        spec.width,
        spec.height,
        spec.frame_count,
        spec.camera(),
        true,
    )
}

/// Synthetic stand-ins for a segmentation method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    Oracle,
    Noisy { sigma: f64 },
    Dilated { radius: u32 },
    Shifted { dx: i32, dy: i32 },
    Constant { value: f32 },
    Delayed { frames: usize },
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    /// `oracle`, `noisy:<sigma>`, `dilated:<r>`, `shifted:<dx>,<dy>`,
    /// `constant:<c>`, `delayed:<k>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = |a: &str| a.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let int = |a: &str| a.trim().parse::<i64>().map_err(|e| format!("{s:?}: {e}"));
        match name {
            "oracle" => Ok(ScorerKind::Oracle),
            "noisy" => Ok(ScorerKind::Noisy { sigma: num(arg)? }),
            "dilated" => Ok(ScorerKind::Dilated { radius: int(arg)? as u32 }),
            "constant" => Ok(ScorerKind::Constant { value: num(arg)? as f32 }),
            "delayed" => Ok(ScorerKind::Delayed { frames: int(arg)? as usize }),
            "shifted" => {
                let (dx, dy) = arg.split_once(',').ok_or(format!("{s:?}: expected dx,dy"))?;
                Ok(ScorerKind::Shifted {
                    dx: int(dx)? as i32,
                    dy: int(dy)? as i32,
                })
            }
            _ => Err(format!("unknown scorer {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScorer {
    pub kind: ScorerKind,
    pub rng_seed: u64,
}

impl ReferenceScorer {
    pub fn new(kind: ScorerKind) -> Self {
        Self { kind, rng_seed: 0 }
    }

    /// Source frame position for the prediction at 0-based position `t`.
    pub fn source_position(&self, t: usize) -> usize {
        match self.kind {
            ScorerKind::Delayed { frames } => t.saturating_sub(frames),
            _ => t,
        }
    }

    /// Scores for the frame whose own ground truth is `frame`, built from the
    /// ground truth `source` (equal to `frame` except for delayed scorers).
    pub fn score_from(&self, source: &GroundTruthFrame, frame: &GroundTruthFrame) -> ScoreMap {
        let mask = &source.mask;
        let (w, h) = mask.dims();
        match self.kind {
            ScorerKind::Oracle | ScorerKind::Delayed { .. } => ScoreMap::from(mask),
            ScorerKind::Constant { value } => ScoreMap::filled(w, h, value),
            ScorerKind::Noisy { sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                rng.set_stream(frame.index as u64);
                let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite");
                let values = mask
                    .values()
                    .iter()
                    .map(|&l| {
                        let s = l as f64 + normal.sample(&mut rng);
                        s.clamp(f32::MIN as f64, f32::MAX as f64) as f32
                    })
                    .collect();
                ScoreMap::from_raw(w, h, values).expect("same dimensions")
            }
            ScorerKind::Dilated { radius } => ScoreMap::from(&dilate(mask, radius)),
            ScorerKind::Shifted { dx, dy } => ScoreMap::from(&LabelMask::from_fn(w, h, |x, y| {
                let sx = x as i64 - dx as i64;
                let sy = y as i64 - dy as i64;
                sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 && mask.get(sx as u32, sy as u32)
            })),
        }
    }
}

/// Frame-at-a-time scorer for streamed sequences. Keeps only the frames a
/// delayed scorer still needs, without depth.
pub struct ScorerStream {
    scorer: ReferenceScorer,
    window: VecDeque<GroundTruthFrame>,
    next: usize,
}

impl ScorerStream {
    pub fn new(scorer: ReferenceScorer) -> Self {
        Self {
            scorer,
            window: VecDeque::new(),
            next: 0,
        }
    }

    /// Scores for the next frame of the sequence.
    pub fn score(&mut self, frame: &GroundTruthFrame) -> ScoreMap {
        let t = self.next;
        self.next += 1;
        self.window.push_back(GroundTruthFrame {
            depth: None,
            pose: None,
            ..frame.clone()
        });
        let first = t + 1 - self.window.len();
        let source = self.scorer.source_position(t);
        for _ in first..source {
            self.window.pop_front();
        }
        self.scorer.score_from(&self.window[0], frame)
    }
}

/// Disk dilation of radius `r`.
pub fn dilate(mask: &LabelMask, radius: u32) -> LabelMask {
    let (w, h) = mask.dims();
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    LabelMask::from_fn(w, h, |x, y| {
        offsets.iter().any(|&(dx, dy)| {
            let (sx, sy) = (x as i64 + dx, y as i64 + dy);
            sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 && mask.get(sx as u32, sy as u32)
        })
    })
}

/// One score map per frame.
pub fn score(scorer: &ReferenceScorer, gt: &[GroundTruthFrame]) -> Vec<ScoreMap> {
    (0..gt.len())
        .into_par_iter()
        .map(|t| scorer.score_from(&gt[scorer.source_position(t)], &gt[t]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::count_positives;

    fn small(frames: u32) -> SceneSpec {
        SceneSpec {
            frame_count: frames,
            ..SceneSpec::base(7).with_resolution(96, 54)
        }
    }

    #[test]
    fn static_scene_repeats() {
        let mut spec = small(5);
        spec.speed = 0.0;
        spec.anomalies = vec![Cuboid::on_ground(0.5, 0.0, 12.0, [1.0, 1.0, 1.0], 1)];
        let (frames, manifest) = generate(&spec, "static").unwrap();
        assert_eq!(manifest.frame_count, 5);
        assert!(count_positives(&frames[0].mask) > 0);
        for f in &frames[1..] {
            assert_eq!(f.mask, frames[0].mask);
            assert_eq!(f.depth, frames[0].depth);
        }
    }

    #[test]
    fn approaching_cuboid_depth_is_closed_form() {
        let mut spec = small(120);
        spec.anomalies = vec![Cuboid::on_ground(2.0, 0.0, 30.0, [1.0, 1.0, 1.0], 1)];
        let mut areas = Vec::new();
        for k in 0..120u32 {
            let f = render_frame(&spec, k + 1);
            let depth = f.depth.as_ref().unwrap().values();
            let nearest = f
                .mask
                .values()
                .iter()
                .zip(depth)
                .filter(|(&m, _)| m == 1)
                .map(|(_, &d)| d)
                .fold(f32::INFINITY, f32::min);
            let expected = 30.0 - 10.0 * k as f64 / 60.0;
            assert!((nearest as f64 - expected).abs() < 1e-5, "frame {k}: {nearest} vs {expected}");
            areas.push(count_positives(&f.mask));
        }
        // pixel sampling jitters the area frame to frame, not over 20 frames
        for k in 20..areas.len() {
            assert!(areas[k] >= areas[k - 20], "area shrank at frame {k}: {areas:?}");
        }
        assert!(areas[119] > 4 * areas[0]);
    }

    #[test]
    fn depth_mask_consistency() {
        let spec = small(40).with_random_anomalies(3);
        let cam = spec.camera();
        for index in [1, 20, 40] {
            let f = render_frame(&spec, index);
            let depth = f.depth.as_ref().unwrap();
            for v in 0..spec.height {
                for u in 0..spec.width {
                    let i = (v * spec.width + u) as usize;
                    let d = depth.values()[i];
                    if f.mask.values()[i] == 1 {
                        // the hit lies on the surface of some spawned cuboid
                        let r = cam.ray(u as f64, v as f64);
                        let p = [r[0] * d as f64, r[1] * d as f64 - spec.camera_height, d as f64 + spec.camera_z(index)];
                        let on_box = spec.anomalies.iter().filter(|c| c.spawn_frame <= index).any(|c| {
                            let (lo, hi) = c.bounds();
                            (0..3).all(|a| p[a] >= lo[a] - 1e-3 && p[a] <= hi[a] + 1e-3)
                        });
                        assert!(on_box, "mask pixel ({u},{v}) not on a cuboid");
                    } else {
                        let expected = ground_depth(&spec, &cam, v).map_or(SKY_DEPTH, |g| g.min(SKY_DEPTH));
                        assert_eq!(d, expected as f32);
                    }
                }
            }
        }
    }

    #[test]
    fn pose_track_advances_uniformly() {
        let spec = small(10);
        for i in 1..10 {
            let a = spec.pose(i);
            let b = spec.pose(i + 1);
            assert_eq!(a.rotation, Pose::IDENTITY.rotation);
            let step = b.translation[2] - a.translation[2];
            assert!((step - spec.speed / spec.fps).abs() < 1e-12);
            assert_eq!(a.translation[0], b.translation[0]);
            assert_eq!(a.translation[1], b.translation[1]);
        }
    }

    #[test]
    fn spawn_range_respected() {
        let spec = SceneSpec::base(3).with_random_anomalies(50);
        for c in &spec.anomalies {
            let near_face = c.center[2] - c.size[2] / 2.0;
            let d = near_face - spec.camera_z(c.spawn_frame);
            assert!((10.0 - 1e-9..=50.0 + 1e-9).contains(&d), "{d}");
        }
        let mut edge = small(2);
        edge.anomaly_spawn_range = (10.0, 10.0);
        assert!(edge.validate().is_ok());
    }

    #[test]
    fn deterministic() {
        let spec = small(3).with_random_anomalies(2);
        let (a, _) = generate(&spec, "x").unwrap();
        let (b, _) = generate(&spec, "x").unwrap();
        assert_eq!(a, b);
        let scorer = ReferenceScorer {
            kind: ScorerKind::Noisy { sigma: 0.3 },
            rng_seed: 11,
        };
        assert_eq!(score(&scorer, &a), score(&scorer, &b));
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(10);
        s.fps = 0.0;
        assert!(generate(&s, "x").is_err());
        let mut s = small(0);
        s.frame_count = 0;
        assert!(generate(&s, "x").is_err());
        let s = small(3).with_resolution(0, 10);
        assert!(generate(&s, "x").is_err());
    }

    #[test]
    fn scorer_parsing() {
        assert_eq!("oracle".parse::<ScorerKind>().unwrap(), ScorerKind::Oracle);
        assert_eq!("shifted:10,-2".parse::<ScorerKind>().unwrap(), ScorerKind::Shifted { dx: 10, dy: -2 });
        assert_eq!("delayed:6".parse::<ScorerKind>().unwrap(), ScorerKind::Delayed { frames: 6 });
        assert!("bogus".parse::<ScorerKind>().is_err());
    }

    #[test]
    fn shift_and_dilate() {
        let m = LabelMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        let f = GroundTruthFrame::new(1, 60.0, m.clone());
        let s = ReferenceScorer::new(ScorerKind::Shifted { dx: 1, dy: -1 }).score_from(&f, &f);
        assert_eq!(s.values()[5 + 3], 1.0);
        let d = dilate(&m, 1);
        assert_eq!(count_positives(&d), 5);
        assert_eq!(count_positives(&dilate(&m, 0)), 1);
    }

    #[test]
    fn scorer_stream_matches_batch() {
        let (gt, _) = generate(&small(30).with_random_anomalies(2), "s").unwrap();
        for kind in ["delayed:4", "noisy:0.3", "oracle", "delayed:0"] {
            let scorer = ReferenceScorer::new(kind.parse().unwrap());
            let batch = score(&scorer, &gt);
            let mut stream = ScorerStream::new(scorer);
            for (f, expected) in gt.iter().zip(&batch) {
                assert_eq!(&stream.score(f), expected, "{kind} frame {}", f.index);
            }
        }
    }
}
