//! Pixel grids, camera intrinsics and rigid poses.
//!
//! Every raster is row-major with the origin at the top-left pixel, x growing
//! rightward and y growing downward. Pixel `(u, v)` sits at image coordinate
//! `(u, v)`, so the pixel centre is the integer location.
//!
//! Camera frames follow the usual vision convention: x right, y down, z along
//! the optical axis. Depth rasters hold z-depth, not ray length. Poses map
//! camera coordinates to world coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Field, Result};

fn check_len(field: Field, width: u32, height: u32, len: usize) -> Result<()> {
    let expected = (width as usize)
        .checked_mul(height as usize)
        .ok_or(Error::DimensionOverflow { width, height })?;
    if expected != len {
        return Err(Error::BufferLength {
            field,
            expected,
            found: len,
        });
    }
    Ok(())
}

/// Per-pixel anomaly scores. Higher means more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        let map = Self::from_raw(width, height, values)?;
        map.validate()?;
        Ok(map)
    }

    /// Builds the map checking only the buffer length. Use [`ScoreMap::validate`]
    /// or [`validate_frame`] before trusting the contents.
    pub fn from_raw(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        check_len(Field::Score, width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                field: Field::Score,
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl From<&LabelMask> for ScoreMap {
    /// The oracle score map: each label cast to a real.
    fn from(mask: &LabelMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            values: mask.values.iter().map(|&l| f32::from(l)).collect(),
        }
    }
}

/// Binary per-pixel labels, 1 for anomaly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self> {
        let mask = Self::from_raw(width, height, values)?;
        mask.validate()?;
        Ok(mask)
    }

    /// Builds the mask checking only the buffer length.
    pub fn from_raw(width: u32, height: u32, values: Vec<u8>) -> Result<Self> {
        check_len(Field::Mask, width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(x, y)));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.values.iter().position(|&v| v > 1) {
            Some(index) => Err(Error::NonBinaryLabel {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    pub fn values(&self) -> &[u8] {
        &self.values
    }
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.values[y as usize * self.width as usize + x as usize] != 0
    }
}

/// Number of anomalous pixels in `mask`.
pub fn count_positives(mask: &LabelMask) -> usize {
    mask.values.iter().filter(|&&v| v != 0).count()
}

/// Z-depth in meters per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        let depth = Self::from_raw(width, height, values)?;
        depth.validate()?;
        Ok(depth)
    }

    /// Builds the map checking only the buffer length.
    pub fn from_raw(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        check_len(Field::Depth, width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Self {
        Self {
            width,
            height,
            values: vec![depth; width as usize * height as usize],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (index, &value) in self.values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    field: Field::Depth,
                    index,
                });
            }
            if value <= 0.0 {
                return Err(Error::NonPositiveDepth { index, value });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Pinhole intrinsics in pixels. No distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidCamera("non-finite principal point".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square-pixel camera with the given horizontal field of view, principal
    /// point at the image centre.
    pub fn from_hfov(width: u32, height: u32, hfov_degrees: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov_degrees.to_radians() / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Checks the principal point lies inside a `width` x `height` image.
    pub fn validate_for(&self, width: u32, height: u32) -> Result<()> {
        Self::new(self.fx, self.fy, self.cx, self.cy)?;
        if !(0.0..width as f64).contains(&self.cx) || !(0.0..height as f64).contains(&self.cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {width}x{height}",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }

    /// Camera-frame ray through pixel `(u, v)` scaled to unit z.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

pub type Matrix3 = [[f64; 3]; 3];

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3,
    pub translation: [f64; 3],
}

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    /// Validated constructor: the rotation must be orthonormal with det +1.
    pub fn new(rotation: Matrix3, translation: [f64; 3]) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.check_rotation(ORTHONORMAL_TOLERANCE)?;
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(pose)
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self {
            translation,
            ..Self::IDENTITY
        }
    }

    /// Rotation about the camera y axis (yaw) followed by a translation.
    pub fn from_yaw(yaw_radians: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw_radians.sin_cos();
        Self {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation,
        }
    }

    pub fn check_rotation(&self, tolerance: f64) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite rotation".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > tolerance {
                    return Err(Error::InvalidPose(format!(
                        "rotation is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        let det = determinant(r);
        if (det - 1.0).abs() > tolerance {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Pose {
            rotation,
            translation: self.transform_point(other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = r[j][i];
            }
        }
        let t = &self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        Pose {
            rotation,
            translation,
        }
    }

    /// Transform taking points in this camera's frame into `target`'s frame.
    pub fn relative_to(&self, target: &Pose) -> Pose {
        target.inverse().compose(self)
    }
}

fn determinant(r: &Matrix3) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// One ground-truth frame of a sequence. Indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub index: u32,
    pub timestamp: f64,
    pub mask: LabelMask,
    pub depth: Option<DepthMap>,
    pub pose: Option<Pose>,
}

impl GroundTruthFrame {
    pub fn new(index: u32, fps: f64, mask: LabelMask) -> Self {
        Self {
            index,
            timestamp: index as f64 / fps,
            mask,
            depth: None,
            pose: None,
        }
    }

    pub fn with_geometry(mut self, depth: DepthMap, pose: Pose) -> Self {
        self.depth = Some(depth);
        self.pose = Some(pose);
        self
    }

    pub fn dims(&self) -> (u32, u32) {
        self.mask.dims()
    }
}

/// Checks every raster invariant of `frame` and that it matches the
/// sequence dimensions.
pub fn validate_frame(frame: &GroundTruthFrame, dims: (u32, u32)) -> Result<()> {
    if frame.mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            field: Field::Mask,
            expected: dims,
            found: frame.mask.dims(),
        });
    }
    check_len(Field::Mask, dims.0, dims.1, frame.mask.values.len())?;
    frame.mask.validate()?;
    if let Some(depth) = &frame.depth {
        if depth.dims() != dims {
            return Err(Error::DimensionMismatch {
                field: Field::Depth,
                expected: dims,
                found: depth.dims(),
            });
        }
        check_len(Field::Depth, dims.0, dims.1, depth.values.len())?;
        depth.validate()?;
    }
    if let Some(pose) = &frame.pose {
        pose.check_rotation(ORTHONORMAL_TOLERANCE)?;
    }
    Ok(())
}

/// Checks a score map against the sequence dimensions.
pub fn validate_scores(scores: &ScoreMap, dims: (u32, u32)) -> Result<()> {
    if scores.dims() != dims {
        return Err(Error::DimensionMismatch {
            field: Field::Score,
            expected: dims,
            found: scores.dims(),
        });
    }
    scores.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(mask: LabelMask) -> GroundTruthFrame {
        GroundTruthFrame::new(1, 60.0, mask)
    }

    #[test]
    fn all_normal_frame_is_valid() {
        assert!(validate_frame(&frame(LabelMask::zeros(4, 4)), (4, 4)).is_ok());
    }

    #[test]
    fn non_binary_label_reports_index() {
        let mut values = vec![0u8; 16];
        values[5] = 2;
        let f = frame(LabelMask::from_raw(4, 4, values).unwrap());
        match validate_frame(&f, (4, 4)) {
            Err(Error::NonBinaryLabel { index, value }) => assert_eq!((index, value), (5, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_depth_is_non_finite() {
        let mut depth = vec![1.0f32; 16];
        depth[3] = f32::NAN;
        let f = frame(LabelMask::zeros(4, 4))
            .with_geometry(DepthMap::from_raw(4, 4, depth).unwrap(), Pose::IDENTITY);
        assert!(matches!(
            validate_frame(&f, (4, 4)),
            Err(Error::NonFinite {
                field: Field::Depth,
                index: 3
            })
        ));
    }

    #[test]
    fn manifest_dimension_mismatch() {
        assert!(matches!(
            validate_frame(&frame(LabelMask::zeros(4, 4)), (4, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn positives() {
        assert_eq!(count_positives(&LabelMask::zeros(3, 3)), 0);
        assert_eq!(count_positives(&LabelMask::new(3, 3, vec![1; 9]).unwrap()), 9);
        assert_eq!(count_positives(&LabelMask::new(2, 2, vec![1, 0, 0, 1]).unwrap()), 2);
    }

    #[test]
    fn wrong_buffer_length_rejected() {
        assert!(LabelMask::new(2, 2, vec![0; 3]).is_err());
        assert!(ScoreMap::new(2, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn camera_rejects_bad_focal_length() {
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0).is_err());
        let cam = CameraModel::new(100.0, 100.0, 50.0, 20.0).unwrap();
        assert!(cam.validate_for(100, 40).is_ok());
        assert!(cam.validate_for(40, 40).is_err());
    }

    #[test]
    fn reflection_is_not_a_pose() {
        let r = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(r, [0.0; 3]).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.2f64..3.2,
            -1.5f64..1.5,
            -3.2f64..3.2,
            prop::array::uniform3(-100.0f64..100.0),
        )
            .prop_map(|(a, b, c, t)| {
                let (sa, ca) = a.sin_cos();
                let (sb, cb) = b.sin_cos();
                let (sc, cc) = c.sin_cos();
                let rz = Pose {
                    rotation: [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]],
                    translation: [0.0; 3],
                };
                let ry = Pose {
                    rotation: [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]],
                    translation: [0.0; 3],
                };
                let rx = Pose {
                    rotation: [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]],
                    translation: t,
                };
                rz.compose(&ry).compose(&rx)
            })
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(pose in arb_pose()) {
            prop_assert!(Pose::new(pose.rotation, pose.translation).is_ok());
            let id = pose.compose(&pose.inverse());
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((id.rotation[i][j] - Pose::IDENTITY.rotation[i][j]).abs() < 1e-6);
                }
                prop_assert!(id.translation[i].abs() < 1e-6);
            }
        }

        #[test]
        fn single_pixel_corruption_is_detected(
            w in 1u32..12, h in 1u32..12, seed in any::<u64>(), kind in 0u8..4
        ) {
            let n = (w * h) as usize;
            let at = (seed % n as u64) as usize;
            let mut mask = vec![0u8; n];
            let mut depth = vec![5.0f32; n];
            match kind {
                0 => mask[at] = 2 + (seed % 250) as u8,
                1 => depth[at] = f32::NAN,
                2 => depth[at] = f32::INFINITY,
                _ => depth[at] = -((seed % 10) as f32),
            }
            let f = frame(LabelMask::from_raw(w, h, mask).unwrap())
                .with_geometry(DepthMap::from_raw(w, h, depth).unwrap(), Pose::IDENTITY);
            let err = validate_frame(&f, (w, h)).unwrap_err();
            let index = match err {
                Error::NonBinaryLabel { index, .. }
                | Error::NonFinite { index, .. }
                | Error::NonPositiveDepth { index, .. } => index,
                other => panic!("unexpected {other:?}"),
            };
            prop_assert_eq!(index, at);
        }
    }
}
