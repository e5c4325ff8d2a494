//! Depth-based forward warping of binary masks between two camera poses.
//!
//! Every source pixel is lifted with its depth, moved into the destination
//! camera and splatted onto the nearest destination pixel. A landing counts as
//! valid when it is in frame, the source depth does not exceed the clipping
//! distance, and the projected depth agrees with the destination depth map
//! (otherwise the point is occluded in the destination view). Landings from
//! several source pixels on one destination pixel are OR-combined, so the
//! result does not depend on traversal order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Field, Result};
use crate::raster::{CameraModel, DepthMap, LabelMask, Pose};

/// Default clipping distance in meters.
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;
/// Absolute part of the occlusion tolerance, in meters.
pub const OCCLUSION_ABS_M: f64 = 0.5;
/// Relative part of the occlusion tolerance.
pub const OCCLUSION_REL: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpStats {
    pub clipped_by_depth: usize,
    pub out_of_frame: usize,
    pub occluded: usize,
    pub landed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// Source mask carried into the destination view.
    pub warped_mask: LabelMask,
    /// Destination pixels reached by at least one valid landing.
    pub valid: LabelMask,
    pub stats: WarpStats,
}

/// Camera-frame point seen at pixel `(u, v)` with z-depth `depth`.
pub fn unproject(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Result<[f64; 3]> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth {
            index: 0,
            value: depth as f32,
        });
    }
    Ok([
        depth * (u - cam.cx) / cam.fx,
        depth * (v - cam.cy) / cam.fy,
        depth,
    ])
}

/// Sub-pixel landing `(u', v', z')` of source pixel `(u, v)` at depth `depth`
/// under the source-to-destination transform, or `None` behind the camera.
pub fn reproject_point(
    u: f64,
    v: f64,
    depth: f64,
    src_to_dst: &Pose,
    cam: &CameraModel,
) -> Option<(f64, f64, f64)> {
    let p = unproject(u, v, depth, cam).ok()?;
    let q = src_to_dst.transform_point(p);
    cam.project(q).map(|(x, y)| (x, y, q[2]))
}

fn occlusion_tolerance(dst_depth: f64) -> f64 {
    OCCLUSION_ABS_M.max(OCCLUSION_REL * dst_depth)
}

#[allow(clippy::too_many_arguments)]
pub fn warp_mask(
    src_mask: &LabelMask,
    src_depth: &DepthMap,
    src_pose: &Pose,
    dst_depth: &DepthMap,
    dst_pose: &Pose,
    cam: &CameraModel,
    max_depth: f64,
) -> Result<WarpResult> {
    let dims = src_mask.dims();
    for (field, found) in [(Field::Depth, src_depth.dims()), (Field::Depth, dst_depth.dims())] {
        if found != dims {
            return Err(Error::DimensionMismatch {
                field,
                expected: dims,
                found,
            });
        }
    }
    let (w, h) = dims;
    let src_to_dst = src_pose.relative_to(dst_pose);
    let mask = src_mask.values();
    let sd = src_depth.values();
    let dd = dst_depth.values();

    let mut warped = vec![0u8; mask.len()];
    let mut valid = vec![0u8; mask.len()];
    let mut stats = WarpStats::default();

    for v in 0..h {
        for u in 0..w {
            let i = v as usize * w as usize + u as usize;
            let d = sd[i] as f64;
            if d > max_depth {
                stats.clipped_by_depth += 1;
                continue;
            }
            let Some((x, y, z)) = reproject_point(u as f64, v as f64, d, &src_to_dst, cam) else {
                stats.out_of_frame += 1;
                continue;
            };
            let (xr, yr) = (x.round(), y.round());
            if !(xr >= 0.0 && yr >= 0.0 && xr < w as f64 && yr < h as f64) {
                stats.out_of_frame += 1;
                continue;
            }
            let j = yr as usize * w as usize + xr as usize;
            let target = dd[j] as f64;
            if (z - target).abs() > occlusion_tolerance(target) {
                stats.occluded += 1;
                continue;
            }
            stats.landed += 1;
            valid[j] = 1;
            warped[j] |= mask[i];
        }
    }

    Ok(WarpResult {
        warped_mask: LabelMask::from_raw(w, h, warped)?,
        valid: LabelMask::from_raw(w, h, valid)?,
        stats,
    })
}
