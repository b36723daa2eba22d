//! Detection and classification evaluation.

mod ap;
mod confusion;
mod folds;
mod matching;
mod roc;

pub use ap::{
    average_precision, average_recall_at_k, mean_ap, per_class_ap, ApMethod, ApOptions,
    AreaRange, ArSuite, MapSuite, COCO_IOU_THRESHOLDS,
};
pub use confusion::{classify_image, per_class_metrics, ClassMetrics, ConfusionMatrix};
pub use folds::{aggregate_folds, make_folds, Catalog, FoldImage, FoldSpec, MetricTable};
pub use matching::{match_detections, GroundTruth, ImageEval, MatchResult};
pub use roc::{one_vs_rest_roc, roc_auc, RocCurve};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("at least one IoU threshold is required")]
    NoThresholds,
    #[error("class index {class} out of range for a {size}x{size} matrix")]
    ClassOutOfRange { class: usize, size: usize },
    #[error("ROC needs at least one positive and one negative sample")]
    SingleClassRoc,
    #[error("score {0} is not a finite number")]
    NonFiniteScore(f64),
    #[error("class {class:?} has {available} images, {required} required")]
    InsufficientImages {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("image id {0:?} appears under more than one class")]
    DuplicateImage(String),
    #[error("fold tables do not share the same class set")]
    MismatchedClasses,
    #[error("nothing to aggregate")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

/// `num / den`, or 0 when the denominator is 0.
pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
