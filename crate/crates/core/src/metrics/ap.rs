use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{match_detections, ratio, GroundTruth, ImageEval, MetricsError};
use crate::exec::Exec;
use crate::geom::{ClassId, Detection};

/// `0.50, 0.55, ..., 0.95`.
pub const COCO_IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

/// Half-open box-area interval `[min, max)` in square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange { min: 0.0, max: f64::INFINITY };
    pub const SMALL: AreaRange = AreaRange { min: 0.0, max: 32.0 * 32.0 };
    pub const MEDIUM: AreaRange = AreaRange { min: 32.0 * 32.0, max: 96.0 * 96.0 };
    pub const LARGE: AreaRange = AreaRange { min: 96.0 * 96.0, max: f64::INFINITY };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApOptions {
    pub method: ApMethod,
    pub area: AreaRange,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self { method: ApMethod::AllPoints, area: AreaRange::ALL }
    }
}

fn class_slice(image: &ImageEval, class: ClassId, area: AreaRange) -> (Vec<Detection>, Vec<GroundTruth>) {
    let dets = image
        .detections
        .iter()
        .filter(|d| d.class_id == class && area.contains(d.bbox.area()))
        .copied()
        .collect();
    let gts = image
        .ground_truths
        .iter()
        .filter(|g| g.class_id == class && area.contains(g.bbox.area()))
        .copied()
        .collect();
    (dets, gts)
}

/// Area under the precision/recall curve of one class over an image set.
///
/// Detections from all images are ranked together by descending score
/// (image order, then detection order, on ties). Returns 0 when the class
/// has no ground truth in range.
pub fn average_precision(
    images: &[ImageEval],
    class: ClassId,
    iou_threshold: f64,
    opts: &ApOptions,
) -> f64 {
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (img, image) in images.iter().enumerate() {
        let (dets, gts) = class_slice(image, class, opts.area);
        n_gt += gts.len();
        let m = match_detections(&dets, &gts, iou_threshold);
        ranked.extend(dets.iter().enumerate().map(|(k, d)| (d.score, img, k, m.det_tp[k])));
    }
    if n_gt == 0 {
        return 0.0;
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // (recall, precision) after every rank
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (rank, r) in ranked.iter().enumerate() {
        if r.3 {
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64, r.3));
    }
    // precision envelope: best precision at this rank or any later one
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }

    match opts.method {
        // each true positive adds 1/n_gt of recall; dividing once keeps a
        // perfect ranking at exactly 1
        ApMethod::AllPoints => {
            curve.iter().zip(&envelope).filter(|(c, _)| c.2).map(|(_, p)| p).sum::<f64>() / n_gt as f64
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    curve
                        .iter()
                        .zip(&envelope)
                        .find(|(c, _)| c.0 >= r - 1e-12)
                        .map_or(0.0, |(_, p)| *p)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

fn gt_classes(images: &[ImageEval], area: AreaRange) -> Vec<ClassId> {
    let mut classes: Vec<ClassId> = images
        .iter()
        .flat_map(|i| i.ground_truths.iter())
        .filter(|g| area.contains(g.bbox.area()))
        .map(|g| g.class_id)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// AP per class with at least one ground truth in range, averaged over thresholds.
pub fn per_class_ap(
    exec: Exec,
    images: &[ImageEval],
    iou_thresholds: &[f64],
    opts: &ApOptions,
) -> Result<BTreeMap<ClassId, f64>, MetricsError> {
    if iou_thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let classes = gt_classes(images, opts.area);
    let jobs: Vec<(ClassId, f64)> = classes
        .iter()
        .flat_map(|&c| iou_thresholds.iter().map(move |&t| (c, t)))
        .collect();
    let aps = exec.map(&jobs, |&(c, t)| average_precision(images, c, t, opts));
    Ok(classes
        .iter()
        .zip(aps.chunks(iou_thresholds.len()))
        .map(|(c, chunk)| (*c, chunk.iter().sum::<f64>() / chunk.len() as f64))
        .collect())
}

/// Mean of AP over classes (with ground truth) and IoU thresholds.
pub fn mean_ap(
    exec: Exec,
    images: &[ImageEval],
    iou_thresholds: &[f64],
    opts: &ApOptions,
) -> Result<f64, MetricsError> {
    let per_class = per_class_ap(exec, images, iou_thresholds, opts)?;
    Ok(ratio(per_class.values().sum(), per_class.len() as f64))
}

/// Mean recall over classes and thresholds after keeping each image's
/// top-`k` detections.
///
/// Truncation ranks all of an image's detections together regardless of
/// class. The area range filters ground truths only.
pub fn average_recall_at_k(
    exec: Exec,
    images: &[ImageEval],
    k: usize,
    iou_thresholds: &[f64],
    area: AreaRange,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if iou_thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let truncated: Vec<ImageEval> = exec.map(images, |img| {
        let order = crate::geom::rank_detections(&img.detections);
        ImageEval {
            detections: order.iter().take(k).map(|&i| img.detections[i]).collect(),
            ground_truths: img
                .ground_truths
                .iter()
                .filter(|g| area.contains(g.bbox.area()))
                .copied()
                .collect(),
        }
    });
    let classes = gt_classes(&truncated, AreaRange::ALL);
    let jobs: Vec<(ClassId, f64)> = classes
        .iter()
        .flat_map(|&c| iou_thresholds.iter().map(move |&t| (c, t)))
        .collect();
    let recalls = exec.map(&jobs, |&(c, t)| {
        let mut hit = 0usize;
        let mut total = 0usize;
        for img in &truncated {
            let (dets, gts) = class_slice(img, c, AreaRange::ALL);
            total += gts.len();
            hit += match_detections(&dets, &gts, t)
                .gt_matched
                .iter()
                .filter(|m| **m)
                .count();
        }
        ratio(hit as f64, total as f64)
    });
    Ok(ratio(recalls.iter().sum(), recalls.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSuite {
    pub map: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub map_small: f64,
    pub map_medium: f64,
    pub map_large: f64,
}

impl MapSuite {
    pub fn compute(exec: Exec, images: &[ImageEval], method: ApMethod) -> Self {
        let run = |th: &[f64], area| {
            mean_ap(exec, images, th, &ApOptions { method, area }).expect("non-empty thresholds")
        };
        Self {
            map: run(&COCO_IOU_THRESHOLDS, AreaRange::ALL),
            map_50: run(&[0.5], AreaRange::ALL),
            map_75: run(&[0.75], AreaRange::ALL),
            map_small: run(&COCO_IOU_THRESHOLDS, AreaRange::SMALL),
            map_medium: run(&COCO_IOU_THRESHOLDS, AreaRange::MEDIUM),
            map_large: run(&COCO_IOU_THRESHOLDS, AreaRange::LARGE),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArSuite {
    pub ar_1: f64,
    pub ar_10: f64,
    pub ar_100: f64,
    pub ar_100_small: f64,
    pub ar_100_medium: f64,
    pub ar_100_large: f64,
}

impl ArSuite {
    pub fn compute(exec: Exec, images: &[ImageEval]) -> Self {
        let run = |k, area| {
            average_recall_at_k(exec, images, k, &COCO_IOU_THRESHOLDS, area).expect("valid k")
        };
        Self {
            ar_1: run(1, AreaRange::ALL),
            ar_10: run(10, AreaRange::ALL),
            ar_100: run(100, AreaRange::ALL),
            ar_100_small: run(100, AreaRange::SMALL),
            ar_100_medium: run(100, AreaRange::MEDIUM),
            ar_100_large: run(100, AreaRange::LARGE),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BoundingBox;

    fn bx(x0: f64) -> BoundingBox {
        BoundingBox::new(x0, 0., x0 + 10., 10.).unwrap()
    }

    fn gt(x0: f64, c: usize) -> GroundTruth {
        GroundTruth { bbox: bx(x0), class_id: ClassId(c) }
    }

    fn det(x0: f64, c: usize, s: f64) -> Detection {
        Detection::new(bx(x0), ClassId(c), s).unwrap()
    }

    fn ap(images: &[ImageEval]) -> f64 {
        average_precision(images, ClassId(0), 0.5, &ApOptions::default())
    }

    #[test]
    fn single_hit() {
        let img = ImageEval { detections: vec![det(0., 0, 0.9)], ground_truths: vec![gt(0., 0)] };
        assert_eq!(ap(&[img]), 1.0);
    }

    #[test]
    fn tp_then_fp() {
        let img = ImageEval {
            detections: vec![det(0., 0, 0.9), det(100., 0, 0.5)],
            ground_truths: vec![gt(0., 0)],
        };
        assert_eq!(ap(&[img]), 1.0);
    }

    #[test]
    fn fp_then_tp() {
        let img = ImageEval {
            detections: vec![det(0., 0, 0.5), det(100., 0, 0.9)],
            ground_truths: vec![gt(0., 0)],
        };
        assert_eq!(ap(&[img]), 0.5);
    }

    #[test]
    fn no_ground_truth_or_no_detections() {
        assert_eq!(ap(&[ImageEval::default()]), 0.0);
        let img = ImageEval { detections: vec![], ground_truths: vec![gt(0., 0)] };
        assert_eq!(ap(&[img]), 0.0);
    }

    #[test]
    fn envelope_lifts_early_precision() {
        // FP, TP, TP over 2 gts: precisions 1/2 and 2/3, envelope 2/3 at both
        let img = ImageEval {
            detections: vec![det(200., 0, 0.9), det(0., 0, 0.8), det(50., 0, 0.7)],
            ground_truths: vec![gt(0., 0), gt(50., 0)],
        };
        assert!((ap(std::slice::from_ref(&img)) - 2.0 / 3.0).abs() < 1e-12);
        let eleven = average_precision(
            &[img],
            ClassId(0),
            0.5,
            &ApOptions { method: ApMethod::ElevenPoint, ..Default::default() },
        );
        assert!((eleven - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn map_means_over_classes() {
        let img = ImageEval {
            detections: vec![det(0., 0, 0.9), det(0., 1, 0.4), det(300., 1, 0.9)],
            ground_truths: vec![gt(0., 0), gt(0., 1)],
        };
        let per = per_class_ap(Exec::Sequential, std::slice::from_ref(&img), &[0.5], &ApOptions::default()).unwrap();
        assert_eq!(per[&ClassId(0)], 1.0);
        assert_eq!(per[&ClassId(1)], 0.5);
        assert_eq!(mean_ap(Exec::Parallel, &[img], &[0.5], &ApOptions::default()).unwrap(), 0.75);
        assert_eq!(
            mean_ap(Exec::Sequential, &[], &[], &ApOptions::default()).unwrap_err(),
            MetricsError::NoThresholds
        );
    }

    #[test]
    fn recall_cases() {
        let one = ImageEval {
            detections: vec![det(0., 0, 0.9)],
            ground_truths: vec![gt(0., 0), gt(500., 0)],
        };
        for k in [1, 10, 100] {
            let r = average_recall_at_k(Exec::Sequential, std::slice::from_ref(&one), k, &COCO_IOU_THRESHOLDS, AreaRange::ALL)
                .unwrap();
            assert_eq!(r, 0.5);
        }
        // the matching detection is ranked second and must be cut at k = 1
        let cut = ImageEval {
            detections: vec![det(900., 0, 0.95), det(0., 0, 0.9)],
            ground_truths: vec![gt(0., 0)],
        };
        assert_eq!(
            average_recall_at_k(Exec::Sequential, std::slice::from_ref(&cut), 1, &[0.5], AreaRange::ALL).unwrap(),
            0.0
        );
        assert_eq!(
            average_recall_at_k(Exec::Sequential, &[cut], 2, &[0.5], AreaRange::ALL).unwrap(),
            1.0
        );
    }

    #[test]
    fn area_buckets() {
        assert!(AreaRange::SMALL.contains(100.0));
        assert!(AreaRange::MEDIUM.contains(1024.0));
        assert!(AreaRange::LARGE.contains(9216.0));
        assert!(!AreaRange::MEDIUM.contains(9216.0));
    }
}
