//! Evaluation harness for video road-anomaly segmentation.
//!
//! Methods are scored three ways:
//!
//! * per-frame ranking metrics (AUROC, average precision, FPR at 95% TPR)
//!   averaged over a sequence, ignoring how long inference takes;
//! * the same metrics with each prediction compared against the ground truth
//!   of the frame reached once inference finishes ([`streaming`]);
//! * temporal consistency, the IoU between a binarized prediction warped
//!   forward by scene geometry and the prediction made one second later
//!   ([`consistency`], [`reprojection`]).
//!
//! [`synthgen`] renders driving sequences with exact depth and poses so every
//! metric can be checked against closed-form expectations.

pub mod adapter;
pub mod consistency;
pub mod error;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod report;
pub mod reprojection;
pub mod streaming;
pub mod synthgen;

pub use error::{Error, Result};
pub use metrics::{FrameMetrics, MetricKind};
pub use raster::{
    count_positives, validate_frame, CameraModel, DepthMap, GroundTruthFrame, LabelMask, Pose,
    ScoreMap,
};
pub use consistency::{ConsistencyConfig, ConsistencyReport, DeltaPolicy};
pub use io::SequenceManifest;
pub use report::MetricReport;
pub use streaming::{LatencyProfile, MeanMetrics, SequenceMetrics};
pub use synthgen::{ReferenceScorer, SceneSpec, ScorerKind};
