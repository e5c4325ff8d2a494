use std::fs;

use streamseg::io::{open_sequence, SequenceManifest, SequenceWriter};
use streamseg::{CameraModel, Error, GroundTruthFrame, LabelMask};

fn write_tiny(dir: &std::path::Path, frames: u32, geometry: bool) {
    let cam = CameraModel::from_hfov(4, 3, 90.0);
    let manifest = SequenceManifest::standard("tiny", 60.0, 4, 3, frames, cam, geometry);
    let mut w = SequenceWriter::create(dir, manifest).unwrap();
    for i in 1..=frames {
        let mask = LabelMask::from_fn(4, 3, |x, y| (x + y + i) % 4 == 0);
        let mut f = GroundTruthFrame::new(i, 60.0, mask);
        if geometry {
            f.depth = Some(streamseg::DepthMap::filled(4, 3, 5.0));
            f.pose = Some(streamseg::Pose::from_translation([0.0, 0.0, i as f64 * 0.1]));
        }
        w.write_frame(&f).unwrap();
    }
    w.finish().unwrap();
}

#[test]
fn iterates_every_frame_in_order() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path(), 25, true);
    let frames: Vec<_> = open_sequence(dir.path()).unwrap().map(Result::unwrap).collect();
    assert_eq!(frames.len(), 25);
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f.index, i as u32 + 1);
        assert_eq!(f.pose.unwrap().translation[2], (i + 1) as f64 * 0.1);
    }
}

#[test]
fn deleted_frame_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path(), 600, false);
    fs::remove_file(dir.path().join("masks/000300.mask")).unwrap();
    let mut reader = open_sequence(&dir.path().join("manifest.json")).unwrap();
    for _ in 1..300 {
        reader.next().unwrap().unwrap();
    }
    match reader.next().unwrap() {
        Err(Error::MissingFile { index, channel, .. }) => {
            assert_eq!(index, 300);
            assert_eq!(channel, "mask");
        }
        other => panic!("expected a missing-file error, got {other:?}"),
    }
}

#[test]
fn depth_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path(), 5, false);
    let reader = open_sequence(dir.path()).unwrap();
    assert!(!reader.manifest().has_geometry());
    for f in reader {
        let f = f.unwrap();
        assert!(f.depth.is_none() && f.pose.is_none());
    }
}
