//! Nucleus instance segmentation and classification metrics.
//!
//! Everything is derived from an [`OverlapTable`] (per-instance areas and
//! pairwise pixel intersections) and a [`MatchLedger`] (IoU pairing between
//! ground truth and prediction). Corpus-level numbers come from summing
//! [`MetricsTally`] counts across images before forming ratios.

mod classification;
mod instance;
pub mod io;
mod matching;
mod report;
mod segmentation;

pub use classification::{
    classification_metrics, f1_from_pr, integrated_metrics, replication_fscore, ClassCounts, ClassScores,
    ReplicationAlphas, ReplicationScores,
};
pub use instance::{class_remap, ClassLabel, InstanceMap, OverlapTable};
pub use matching::{match_instances, MatchLedger, MatchedPair, UnmatchedInstance, DEFAULT_IOU_THRESHOLD};
pub use report::{ClassReport, MetricsReport, MetricsTally};
pub use segmentation::{aji, aji_plus, detection_recall, dice, dice2, panoptic, Dice2Mode, Panoptic};

use thiserror::Error;

/// Class label assigned to spurious predictions in the integrated metrics.
pub const NO_CLASS: &str = "none";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: ground truth {gt:?} vs prediction {pred:?}")]
    DimensionMismatch { gt: (u32, u32), pred: (u32, u32) },
    #[error("label buffer holds {actual} entries, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("instance {0} has no class entry")]
    MissingClass(u32),
    #[error("class {0:?} has no entry in the remapping")]
    UnmappedClass(String),
}
