use serde::{Deserialize, Serialize};

use super::{ratio, MetricsError};
use crate::geom::{rank_detections, ClassId, Detection};

/// Square count matrix indexed by `(true class, predicted class)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        Self { size, counts: vec![0; size * size] }
    }

    pub fn from_pairs(
        size: usize,
        pairs: impl IntoIterator<Item = (ClassId, ClassId)>,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(size);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn check(&self, c: ClassId) -> Result<(), MetricsError> {
        if c.0 >= self.size {
            return Err(MetricsError::ClassOutOfRange { class: c.0, size: self.size });
        }
        Ok(())
    }

    pub fn record(&mut self, truth: ClassId, predicted: ClassId) -> Result<(), MetricsError> {
        self.add(truth, predicted, 1)
    }

    pub fn add(&mut self, truth: ClassId, predicted: ClassId, n: u64) -> Result<(), MetricsError> {
        self.check(truth)?;
        self.check(predicted)?;
        self.counts[truth.0 * self.size + predicted.0] += n;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.size + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.size).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.size).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(tp, fp, fn, tn)` for one class against all others.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(class, class);
        let fp = self.col_sum(class) - tp;
        let fn_ = self.row_sum(class) - tp;
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.size.max(1)).take(self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Ground-truth count for the class.
    pub support: u64,
}

impl ClassMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let (tp_f, fp_f, fn_f, tn_f) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let precision = ratio(tp_f, tp_f + fp_f);
        let sensitivity = ratio(tp_f, tp_f + fn_f);
        Self {
            accuracy: ratio(tp_f + tn_f, tp_f + fp_f + fn_f + tn_f),
            precision,
            sensitivity,
            specificity: ratio(tn_f, tn_f + fp_f),
            f1: ratio(2.0 * precision * sensitivity, precision + sensitivity),
            support: tp + fn_,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.sensitivity, self.specificity, self.f1]
    }
}

/// One-vs-rest metrics for `class`. Zero denominators give 0.
pub fn per_class_metrics(cm: &ConfusionMatrix, class: ClassId) -> Result<ClassMetrics, MetricsError> {
    cm.check(class)?;
    let (tp, fp, fn_, tn) = cm.one_vs_rest(class.0);
    Ok(ClassMetrics::from_counts(tp, fp, fn_, tn))
}

/// Image-level label: the class of the best-ranked detection, or `blank`.
pub fn classify_image(dets: &[Detection], blank: ClassId) -> ClassId {
    rank_detections(dets).first().map_or(blank, |&i| dets[i].class_id)
}
