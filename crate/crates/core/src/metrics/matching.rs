use serde::{Deserialize, Serialize};

use crate::geom::{iou, BoundingBox, ClassId, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
}

/// Detections and ground truths of one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// True-positive flag per detection, in input order.
    pub det_tp: Vec<bool>,
    /// Ground truth claimed by each detection.
    pub det_gt: Vec<Option<usize>>,
    /// Whether each ground truth was matched.
    pub gt_matched: Vec<bool>,
}

/// Greedy score-ordered matching.
///
/// Detections are visited by descending score (input order on ties). Each
/// claims the unmatched same-class ground truth with the highest IoU, if that
/// IoU is at least `iou_threshold`; the lowest index wins IoU ties.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));

    let mut det_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || g.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            det_gt[i] = Some(j);
        }
    }
    MatchResult {
        det_tp: det_gt.iter().map(Option::is_some).collect(),
        det_gt,
        gt_matched,
    }
}
