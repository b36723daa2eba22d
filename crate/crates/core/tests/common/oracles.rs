//! Reference implementations written independently of the library, plus
//! random instance generators. Shared by the integration and acceptance
//! tests.
#![allow(dead_code)]

use biopay_core::geom::{BoundingBox, ClassId, Detection};
use biopay_core::metrics::{GroundTruth, ImageEval};
use rand::Rng;

/// IoU straight from the corner coordinates.
pub fn iou_ref(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn outranks(a: &Detection, ia: usize, b: &Detection, ib: usize) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.class_id != b.class_id {
        return a.class_id < b.class_id;
    }
    ia < ib
}

/// Exhaustive greedy NMS: repeatedly take the best remaining box by linear
/// scan and strike every same-class box overlapping it by more than `thr`.
/// Returns input indices in selection order.
pub fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<usize> {
    let mut alive = vec![true; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.is_none_or(|b| outranks(&dets[i], i, &dets[b], b)) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(b);
        for i in 0..dets.len() {
            if alive[i] && dets[i].class_id == dets[b].class_id && iou_ref(&dets[i].bbox, &dets[b].bbox) > thr {
                alive[i] = false;
            }
        }
    }
    kept
}

/// Brute-force AP for one class: rank every detection globally, match
/// each against its image's unclaimed ground truth, then integrate the
/// interpolated precision (best precision at any recall at least as high)
/// over each recall step.
pub fn ap_oracle(images: &[ImageEval], class: ClassId, thr: f64) -> f64 {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    let mut n_gt = 0usize;
    for (im, img) in images.iter().enumerate() {
        n_gt += img.ground_truths.iter().filter(|g| g.class_id == class).count();
        for (k, d) in img.detections.iter().enumerate() {
            if d.class_id == class {
                ranked.push((d.score, im, k));
            }
        }
    }
    if n_gt == 0 {
        return 0.0;
    }
    // insertion sort keeps this visibly independent of the library's sort
    for i in 1..ranked.len() {
        let mut j = i;
        while j > 0 && before(ranked[j], ranked[j - 1]) {
            ranked.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut claimed: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.ground_truths.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for &(_, im, k) in &ranked {
        let d = &images[im].detections[k];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[im].ground_truths.iter().enumerate() {
            if gt.class_id != class || claimed[im][g] {
                continue;
            }
            let v = iou_ref(&d.bbox, &gt.bbox);
            if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            claimed[im][g] = true;
        }
        hits.push(best.is_some());
    }
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let mut tp = 0usize;
    for (r, hit) in hits.iter().enumerate() {
        tp += usize::from(*hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (r + 1) as f64);
    }
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if !hits[k] {
            continue;
        }
        let mut interp = 0.0f64;
        for j in 0..hits.len() {
            if recall[j] >= recall[k] && precision[j] > interp {
                interp = precision[j];
            }
        }
        ap += interp;
    }
    ap / n_gt as f64
}

fn before(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Mean over ground-truth classes of the per-class AP averaged over thresholds.
pub fn map_oracle(images: &[ImageEval], thresholds: &[f64]) -> f64 {
    let mut classes: Vec<ClassId> = images.iter().flat_map(|i| i.ground_truths.iter().map(|g| g.class_id)).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut s = 0.0;
        for &t in thresholds {
            s += ap_oracle(images, c, t);
        }
        total += s / thresholds.len() as f64;
    }
    total / classes.len() as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
pub fn mann_whitney(samples: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut u = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                u += 1.0;
            } else if p == n {
                u += 0.5;
            }
        }
    }
    u / (pos.len() * neg.len()) as f64
}

/// Adam for a single scalar parameter given its gradient at each step.
pub fn adam_scalar(theta0: f64, grad_at: impl Fn(usize, f64) -> f64, steps: usize, lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad_at(t, theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

/// Relative error with a tiny floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Box on an integer grid in `[0, extent]` so overlaps and ties are common.
pub fn grid_box(rng: &mut impl Rng, extent: u32) -> BoundingBox {
    let x0 = rng.random_range(0..extent);
    let y0 = rng.random_range(0..extent);
    let x1 = rng.random_range(x0 + 1..=extent);
    let y1 = rng.random_range(y0 + 1..=extent);
    BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap()
}

/// Scores from a coarse set so equal scores show up regularly.
pub fn coarse_score(rng: &mut impl Rng) -> f64 {
    rng.random_range(0..=20) as f64 / 20.0
}

pub fn random_detections(rng: &mut impl Rng, max: usize, classes: usize, extent: u32) -> Vec<Detection> {
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| Detection {
            bbox: grid_box(rng, extent),
            class_id: ClassId(rng.random_range(0..classes)),
            score: coarse_score(rng),
        })
        .collect()
}

/// One micro evaluation set: a few images, each with ≤ `max_dets`
/// detections and ≤ `max_gts` ground truths over `classes` classes.
pub fn random_eval_set(rng: &mut impl Rng, max_dets: usize, max_gts: usize, classes: usize) -> Vec<ImageEval> {
    let images = rng.random_range(1..=3);
    let mut out = Vec::new();
    let (mut dets_left, mut gts_left) = (max_dets, max_gts);
    for _ in 0..images {
        let nd = rng.random_range(0..=dets_left);
        let ng = rng.random_range(0..=gts_left);
        dets_left -= nd;
        gts_left -= ng;
        let ground_truths: Vec<GroundTruth> = (0..ng)
            .map(|_| GroundTruth { bbox: grid_box(rng, 12), class_id: ClassId(rng.random_range(0..classes)) })
            .collect();
        // half the detections are jittered copies of a ground truth
        let detections = (0..nd)
            .map(|_| {
                let (bbox, class_id) = match ground_truths.get(rng.random_range(0..ground_truths.len().max(1) * 2)) {
                    Some(g) => {
                        let [x0, y0, x1, y1] = g.bbox.corners();
                        let j = rng.random_range(0..=1) as f64;
                        let class_id = if rng.random_bool(0.8) { g.class_id } else { ClassId(rng.random_range(0..classes)) };
                        (BoundingBox::new(x0, y0, x1 + j, y1).unwrap(), class_id)
                    }
                    None => (grid_box(rng, 12), ClassId(rng.random_range(0..classes))),
                };
                Detection { bbox, class_id, score: coarse_score(rng) }
            })
            .collect();
        out.push(ImageEval { detections, ground_truths });
    }
    out
}
