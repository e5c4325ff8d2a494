//! Shared inputs for the benchmarks.

use streamseg::{LabelMask, ScoreMap};

/// A frame-sized score map and mask with a square anomaly in the middle and
/// scores that overlap between classes.
pub fn frame(width: u32, height: u32) -> (ScoreMap, LabelMask) {
    let mask = LabelMask::from_fn(width, height, |x, y| {
        x.abs_diff(width / 2) < width / 10 && y.abs_diff(height / 2) < height / 10
    });
    let values = mask
        .values()
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let h = (i as u32).wrapping_mul(2_654_435_761) >> 8;
            let noise = h as f32 / (1u32 << 24) as f32;
            if label == 1 {
                0.4 + 0.6 * noise
            } else {
                0.6 * noise
            }
        })
        .collect();
    (ScoreMap::new(width, height, values).unwrap(), mask)
}
