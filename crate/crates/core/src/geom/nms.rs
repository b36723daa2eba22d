use serde::{Deserialize, Serialize};

use super::{iou, BoundingBox, ClassId, GeomError};
use crate::exec::Exec;

pub const DEFAULT_NMS_IOU: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_id: ClassId, score: f64) -> Result<Self, GeomError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeomError::InvalidScore(score));
        }
        Ok(Self {
            bbox,
            class_id,
            score,
        })
    }
}

/// Score descending, then class ascending, then input position.
pub fn rank_detections(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy per-class non-maximum suppression.
///
/// A detection is dropped when its IoU with an already kept detection of the
/// same class is strictly greater than `iou_threshold`. Survivors come back
/// in ranking order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!((0.0..=1.0).contains(&iou_threshold));
    let order = rank_detections(dets);
    let mut kept: Vec<usize> = Vec::with_capacity(dets.len());
    for &i in &order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == d.class_id && iou(&dets[k].bbox, &d.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Runs [`nms`] independently over many images.
pub fn nms_batch(exec: Exec, batches: &[Vec<Detection>], iou_threshold: f64) -> Vec<Vec<Detection>> {
    exec.map(batches, |dets| nms(dets, iou_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, class: usize, score: f64) -> Detection {
        Detection::new(
            BoundingBox::new(x0, y0, x1, y1).unwrap(),
            ClassId(class),
            score,
        )
        .unwrap()
    }

    #[test]
    fn single_detection_survives() {
        let d = det(0., 0., 10., 10., 0, 0.4);
        assert_eq!(nms(&[d], 0.5), vec![d]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn identical_boxes_keep_the_best() {
        let a = det(0., 0., 10., 10., 0, 0.8);
        let b = det(0., 0., 10., 10., 0, 0.9);
        assert_eq!(nms(&[a, b], 0.5), vec![b]);
    }

    #[test]
    fn classes_do_not_suppress_each_other() {
        let a = det(0., 0., 10., 10., 0, 0.8);
        let b = det(0., 0., 10., 10., 1, 0.9);
        assert_eq!(nms(&[a, b], 0.5), vec![b, a]);
    }

    #[test]
    fn threshold_is_exclusive() {
        // IoU exactly 0.5: (0,0,2,1) vs (0,0,1,1)... area 2 and 1, inter 1, union 2
        let a = det(0., 0., 2., 1., 0, 0.9);
        let b = det(0., 0., 1., 1., 0, 0.8);
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
        assert_eq!(nms(&[a, b], 0.49).len(), 1);
        assert_eq!(nms(&[a, b, a], 1.0).len(), 3);
    }

    #[test]
    fn ties_break_by_class_then_position() {
        let a = det(0., 0., 1., 1., 2, 0.5);
        let b = det(5., 5., 6., 6., 1, 0.5);
        let c = det(9., 9., 10., 10., 1, 0.5);
        assert_eq!(nms(&[a, b, c], 0.5), vec![b, c, a]);
    }

    #[test]
    fn rejects_out_of_range_score() {
        let bx = BoundingBox::new(0., 0., 1., 1.).unwrap();
        assert!(Detection::new(bx, ClassId(0), 1.5).is_err());
        assert!(Detection::new(bx, ClassId(0), f64::NAN).is_err());
    }
}
