use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassMetrics, MetricsError};
use crate::exec::Exec;

/// Image ids grouped by class label.
pub type Catalog = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldImage {
    pub class: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    /// 1-based.
    pub index: usize,
    pub images: Vec<FoldImage>,
}

impl FoldSpec {
    pub fn class_histogram(&self) -> BTreeMap<&str, usize> {
        let mut h = BTreeMap::new();
        for img in &self.images {
            *h.entry(img.class.as_str()).or_insert(0) += 1;
        }
        h
    }
}

/// Draws `folds` stratified subsets with `per_class` images of every class.
///
/// Sampling is without replacement inside a fold; folds are drawn
/// independently, so an image may appear in several folds. Fold `i` uses
/// ChaCha stream `i` of `seed`, which keeps the result independent of the
/// execution strategy.
pub fn make_folds(
    exec: Exec,
    catalog: &Catalog,
    per_class: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldSpec>, MetricsError> {
    let mut seen = HashSet::new();
    for (class, ids) in catalog {
        if ids.len() < per_class {
            return Err(MetricsError::InsufficientImages {
                class: class.clone(),
                available: ids.len(),
                required: per_class,
            });
        }
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::DuplicateImage(id.clone()));
            }
        }
    }
    Ok(exec.map_range(folds, |f| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f as u64);
        let images = catalog
            .iter()
            .flat_map(|(class, ids)| {
                let mut picks = sample(&mut rng, ids.len(), per_class).into_vec();
                picks.sort_unstable();
                picks
                    .into_iter()
                    .map(|i| FoldImage { class: class.clone(), image_id: ids[i].clone() })
                    .collect::<Vec<_>>()
            })
            .collect();
        FoldSpec { index: f + 1, images }
    }))
}

/// Per-class metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: BTreeMap<String, ClassMetrics>,
}

impl MetricTable {
    /// Class-average of every metric; support is the sum over classes.
    pub fn overall(&self) -> ClassMetrics {
        let n = self.rows.len();
        if n == 0 {
            return ClassMetrics::default();
        }
        let mut sums = [0.0; 5];
        let mut support = 0;
        for m in self.rows.values() {
            for (s, v) in sums.iter_mut().zip(m.values()) {
                *s += v;
            }
            support += m.support;
        }
        let mean = |i: usize| sums[i] / n as f64;
        ClassMetrics {
            accuracy: mean(0),
            precision: mean(1),
            sensitivity: mean(2),
            specificity: mean(3),
            f1: mean(4),
            support,
        }
    }
}

/// Unweighted mean of every (class, metric) cell across folds.
///
/// Support is averaged too and rounded to the nearest integer.
pub fn aggregate_folds(tables: &[MetricTable]) -> Result<MetricTable, MetricsError> {
    let first = tables.first().ok_or(MetricsError::Empty)?;
    if tables
        .iter()
        .any(|t| !t.rows.keys().eq(first.rows.keys()))
    {
        return Err(MetricsError::MismatchedClasses);
    }
    let n = tables.len() as f64;
    let rows = first
        .rows
        .keys()
        .map(|class| {
            let cells: Vec<&ClassMetrics> = tables.iter().map(|t| &t.rows[class]).collect();
            let mean = |f: fn(&ClassMetrics) -> f64| cells.iter().map(|m| f(m)).sum::<f64>() / n;
            let support = cells.iter().map(|m| m.support as f64).sum::<f64>() / n;
            let m = ClassMetrics {
                accuracy: mean(|m| m.accuracy),
                precision: mean(|m| m.precision),
                sensitivity: mean(|m| m.sensitivity),
                specificity: mean(|m| m.specificity),
                f1: mean(|m| m.f1),
                support: support.round() as u64,
            };
            (class.clone(), m)
        })
        .collect();
    Ok(MetricTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(classes: usize, per: usize) -> Catalog {
        (0..classes)
            .map(|c| (format!("c{c:02}"), (0..per).map(|i| format!("c{c}-img{i}")).collect()))
            .collect()
    }

    #[test]
    fn default_protocol_shape() {
        let folds = make_folds(Exec::default(), &catalog(13, 200), 29, 10, 42).unwrap();
        assert_eq!(folds.len(), 10);
        for (i, f) in folds.iter().enumerate() {
            assert_eq!(f.index, i + 1);
            assert_eq!(f.images.len(), 377);
            assert!(f.class_histogram().values().all(|&n| n == 29));
            let ids: HashSet<_> = f.images.iter().map(|x| &x.image_id).collect();
            assert_eq!(ids.len(), 377);
        }
        assert_ne!(folds[0], folds[1]);
    }

    #[test]
    fn deterministic_across_strategies() {
        let c = catalog(4, 50);
        let a = make_folds(Exec::Sequential, &c, 10, 5, 9).unwrap();
        let b = make_folds(Exec::Parallel, &c, 10, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_small_class_and_duplicates() {
        let mut c = catalog(2, 5);
        assert!(matches!(
            make_folds(Exec::Sequential, &c, 6, 1, 0),
            Err(MetricsError::InsufficientImages { available: 5, required: 6, .. })
        ));
        c.get_mut("c01").unwrap().push("c0-img0".into());
        assert!(matches!(
            make_folds(Exec::Sequential, &c, 1, 1, 0),
            Err(MetricsError::DuplicateImage(_))
        ));
    }

    fn table(acc: f64) -> MetricTable {
        let m = ClassMetrics { accuracy: acc, support: 29, ..Default::default() };
        MetricTable { rows: [("a".to_string(), m), ("b".to_string(), m)].into() }
    }

    #[test]
    fn aggregation() {
        let t = table(0.9940);
        assert_eq!(aggregate_folds(std::slice::from_ref(&t)).unwrap(), t);
        assert_eq!(aggregate_folds(&[t.clone(), t.clone()]).unwrap(), t);
        let avg = aggregate_folds(&[table(0.9940), table(0.9969)]).unwrap();
        assert!((avg.rows["a"].accuracy - 0.99545).abs() < 1e-12);
        assert_eq!(avg.rows["a"].support, 29);
        assert_eq!(aggregate_folds(&[]).unwrap_err(), MetricsError::Empty);
        let mut other = table(0.5);
        other.rows.remove("b");
        assert_eq!(aggregate_folds(&[t, other]).unwrap_err(), MetricsError::MismatchedClasses);
    }

    #[test]
    fn overall_row_is_class_average() {
        let mut t = table(0.5);
        t.rows.get_mut("b").unwrap().accuracy = 1.0;
        let o = t.overall();
        assert_eq!(o.accuracy, 0.75);
        assert_eq!(o.support, 58);
    }
}
