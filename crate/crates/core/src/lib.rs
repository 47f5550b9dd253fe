//! LiDAR scene-understanding evaluation: semantic segmentation (IoU, mIoU,
//! fwIoU), panoptic segmentation (PQ, SQ, RQ, PQ†) and panoptic tracking
//! (PAT, PTQ, LSTQ), box-to-point label fusion and a synthetic scenario
//! generator for exercising the tracking metrics.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod labels;
pub mod manifest;
mod matching;
pub mod panoptic;
pub mod report;
pub mod scenario;
pub mod semantic;
pub mod tracking;

pub use error::{Error, Result};
pub use eval::{evaluate_panoptic, evaluate_semantic, evaluate_tracking, FuseMode};
pub use fusion::{fuse_gt, fuse_pred, points_in_box, Box3D, ScoreFilter};
pub use io::Point;
pub use labels::{
    ClassMap, ClassMapEntry, FilterTarget, MinPointsFilter, ScanLabels, Segment, SequenceLabels,
};
pub use manifest::{LoadedManifest, Manifest};
pub use panoptic::{PanopticResult, PqStats, ScanMatches};
pub use report::MetricReport;
pub use scenario::{PredAction, ScenarioSpec, SequencePair, TrackSpec};
pub use semantic::ConfusionMatrix;
pub use tracking::{GapMode, TrackMean, TrackingConfig, TrackingResult};
