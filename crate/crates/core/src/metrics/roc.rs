use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::geom::{ClassId, Detection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point after the origin.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// ROC curve over all distinct score thresholds, with trapezoidal AUC.
///
/// The area is accumulated in integer half-units so that tied scores count
/// exactly one half, as in the Mann-Whitney statistic.
pub fn roc_auc(samples: &[(f64, bool)]) -> Result<RocCurve, MetricsError> {
    if let Some(&(s, _)) = samples.iter().find(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    let positives = samples.iter().filter(|(_, p)| *p).count() as u64;
    let negatives = samples.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClassRoc);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of (1 negative x 1 positive)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        thresholds.push(score);
    }
    let auc = area2 as f64 / (2.0 * positives as f64 * negatives as f64);
    Ok(RocCurve { points, thresholds, auc })
}

/// Per-class one-vs-rest ROC over image-level scores.
///
/// An image scores for a species class with its best detection of that
/// class (0 when absent). For `blank` the score is one minus the best
/// detection score of any class. Classes without both positives and
/// negatives map to `None`.
pub fn one_vs_rest_roc(
    images: &[(ClassId, Vec<Detection>)],
    classes: usize,
    blank: ClassId,
) -> Vec<Option<RocCurve>> {
    (0..classes)
        .map(|c| {
            let samples: Vec<(f64, bool)> = images
                .iter()
                .map(|(truth, dets)| {
                    let best = |f: &dyn Fn(&Detection) -> bool| {
                        dets.iter().filter(|d| f(d)).map(|d| d.score).fold(0.0, f64::max)
                    };
                    let score = if ClassId(c) == blank {
                        1.0 - best(&|_| true)
                    } else {
                        best(&|d| d.class_id.0 == c)
                    };
                    (score, truth.0 == c)
                })
                .collect();
            roc_auc(&samples).ok()
        })
        .collect()
}
