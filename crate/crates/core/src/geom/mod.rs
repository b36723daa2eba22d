//! Detector geometry: boxes, IoU, anchors, NMS, the regression-delta codec
//! and the anchor/proposal label assignment rules.

mod anchors;
mod assign;
mod bbox;
mod delta;
mod nms;

pub use anchors::{generate_anchors, generate_anchors_with, Anchor, AnchorSpec};
pub use assign::{
    assign_proposal_labels, assign_rpn_labels, assign_rpn_labels_with, sample_minibatch,
    AssignmentLabel, ProposalLabel, DEFAULT_RPN_BG_IOU, DEFAULT_RPN_FG_IOU, PROPOSAL_BG_IOU,
    PROPOSAL_FG_IOU,
};
pub use bbox::{iou, iou_matrix, BoundingBox};
pub use delta::{decode_deltas, encode_deltas, BoxDelta};
pub use nms::{nms, nms_batch, rank_detections, Detection, DEFAULT_NMS_IOU};

use thiserror::Error;

/// Index of a class in a model's label space.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub usize);

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },
    #[error("box has non-positive width or height")]
    DegenerateBox,
    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),
    #[error("anchor grid must have at least one cell and a positive stride")]
    EmptyGrid,
    #[error("anchor {0} list must be non-empty and strictly positive")]
    InvalidAnchorParams(&'static str),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
}
