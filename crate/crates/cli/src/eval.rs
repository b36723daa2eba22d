//! Offline evaluation of a predictions file against VOC ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use anyhow::{bail, Context, Result};
use biopay_core::geom::{ClassId, Detection};
use biopay_core::ingest::{parse_voc_xml, SpeciesDetection};
use biopay_core::metrics::{
    aggregate_folds, classify_image, make_folds, one_vs_rest_roc, per_class_metrics, ApMethod, ArSuite, Catalog,
    ConfusionMatrix, GroundTruth, ImageEval, MapSuite, MetricTable,
};
use biopay_core::Exec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::reports;

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub filename: String,
    #[serde(default)]
    pub detections: Vec<SpeciesDetection>,
}

struct LabelledImage {
    filename: String,
    truth: ClassId,
    ground_truths: Vec<GroundTruth>,
    detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAuc {
    pub class: String,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub tool: String,
    pub config_digest: String,
    pub predictions_sha256: String,
    pub ground_truth_sha256: String,
    pub seed: u64,
    pub folds: usize,
    pub per_class: usize,
    pub images: usize,
    pub class_counts: Vec<(String, usize)>,
    pub unmatched_predictions: usize,
    pub map: MapSuite,
    pub ar: ArSuite,
    pub auc: Vec<ClassAuc>,
}

pub struct EvalOutcome {
    pub metadata: RunMetadata,
    pub average: MetricTable,
    pub files: Vec<String>,
}

fn class_index(classes: &[String]) -> HashMap<&str, ClassId> {
    classes.iter().enumerate().map(|(i, c)| (c.as_str(), ClassId(i))).collect()
}

/// Reads every `*.xml` under `dir` (sorted by path) as VOC.
fn load_ground_truth(dir: &Path, classes: &[String], blank: ClassId) -> Result<(Vec<LabelledImage>, String)> {
    let index = class_index(classes);
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    let mut hasher = Sha256::new();
    let mut images = Vec::new();
    let mut seen = HashMap::new();
    for p in paths {
        let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        let doc = parse_voc_xml(&bytes).with_context(|| format!("parsing {}", p.display()))?;
        hasher.update(p.file_name().unwrap_or_default().as_encoded_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        if let Some(prev) = seen.insert(doc.filename.clone(), p.clone()) {
            bail!("{} and {} both annotate {}", prev.display(), p.display(), doc.filename);
        }
        let mut ground_truths = Vec::new();
        let mut votes = vec![0usize; classes.len()];
        for (i, o) in doc.objects.iter().enumerate() {
            let Some(&c) = index.get(o.name.as_str()).filter(|c| **c != blank) else {
                bail!("{}: object {i} has unknown class {:?}", p.display(), o.name);
            };
            votes[c.0] += 1;
            ground_truths.push(GroundTruth { bbox: o.bbox.to_bounding_box(), class_id: c });
        }
        // majority species; roster order breaks ties
        let truth = votes
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(blank, |(i, _)| ClassId(i));
        images.push(LabelledImage { filename: doc.filename, truth, ground_truths, detections: Vec::new() });
    }
    if images.is_empty() {
        bail!("no VOC annotations found in {}", dir.display());
    }
    Ok((images, hex::encode(hasher.finalize())))
}

fn load_predictions(path: &Path, images: &mut [LabelledImage], classes: &[String]) -> Result<(usize, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let index = class_index(classes);
    let by_name: HashMap<String, usize> = images.iter().enumerate().map(|(i, im)| (im.filename.clone(), i)).collect();
    let mut unmatched = 0;
    for (n, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: PredictionLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed prediction", path.display(), n + 1))?;
        let Some(&i) = by_name.get(&pred.filename) else {
            unmatched += 1;
            continue;
        };
        for d in pred.detections {
            let Some(&c) = index.get(d.species.as_str()) else {
                bail!("{}:{}: unknown class {:?}", path.display(), n + 1, d.species);
            };
            let det = Detection::new(d.bbox, c, d.score).with_context(|| format!("{}:{}", path.display(), n + 1))?;
            images[i].detections.push(det);
        }
    }
    Ok((unmatched, digest))
}

/// Rows for the classes present in the catalog only.
fn metric_table(cm: &ConfusionMatrix, classes: &[String], catalog: &Catalog) -> Result<MetricTable> {
    let mut rows = BTreeMap::new();
    for (i, c) in classes.iter().enumerate().filter(|(_, c)| catalog.contains_key(*c)) {
        rows.insert(c.clone(), per_class_metrics(cm, ClassId(i))?);
    }
    Ok(MetricTable { rows })
}

/// Builds folds, computes every report, and writes them under `out_dir`.
pub fn run_eval(config: &RunConfig, predictions: &Path, gt_dir: &Path, out_dir: &Path) -> Result<EvalOutcome> {
    let classes = config.species.classes();
    let blank = ClassId(classes.len() - 1);
    let (mut images, gt_digest) = load_ground_truth(gt_dir, &classes, blank)?;
    let (unmatched, pred_digest) = load_predictions(predictions, &mut images, &classes)?;
    let exec = Exec::default();

    let predicted: HashMap<&str, ClassId> = images
        .iter()
        .map(|im| {
            let confident: Vec<Detection> =
                im.detections.iter().filter(|d| d.score >= config.detector.conf_threshold).copied().collect();
            (im.filename.as_str(), classify_image(&confident, blank))
        })
        .collect();
    let truth_of: HashMap<&str, ClassId> = images.iter().map(|im| (im.filename.as_str(), im.truth)).collect();

    let mut catalog: Catalog = BTreeMap::new();
    for im in &images {
        catalog.entry(classes[im.truth.0].clone()).or_default().push(im.filename.clone());
    }
    let folds = make_folds(exec, &catalog, config.folds.per_class, config.folds.folds, config.folds.seed)?;

    let mut files = Vec::new();
    let mut tables = Vec::new();
    for fold in &folds {
        let pairs = fold.images.iter().map(|fi| (truth_of[fi.image_id.as_str()], predicted[fi.image_id.as_str()]));
        let cm = ConfusionMatrix::from_pairs(classes.len(), pairs)?;
        let table = metric_table(&cm, &classes, &catalog)?;
        let name = format!("metrics_fold{}.csv", fold.index);
        reports::write(out_dir, &name, &reports::metric_table_csv(&table, &classes))?;
        files.push(name);
        tables.push(table);
    }
    let average = aggregate_folds(&tables)?;
    reports::write(out_dir, "metrics_avg.csv", &reports::metric_table_csv(&average, &classes))?;
    files.push("metrics_avg.csv".into());

    let all = ConfusionMatrix::from_pairs(classes.len(), images.iter().map(|im| (im.truth, predicted[im.filename.as_str()])))?;
    reports::write(out_dir, "confusion.csv", &reports::confusion_csv(&all, &classes))?;
    files.push("confusion.csv".into());

    let roc_input: Vec<(ClassId, Vec<Detection>)> = images.iter().map(|im| (im.truth, im.detections.clone())).collect();
    let curves = one_vs_rest_roc(&roc_input, classes.len(), blank);
    let mut auc = Vec::new();
    for (c, curve) in classes.iter().zip(&curves) {
        if let Some(curve) = curve {
            let name = format!("roc_{}.csv", reports::slug(c));
            reports::write(out_dir, &name, &reports::roc_csv(curve))?;
            files.push(name);
        }
        auc.push(ClassAuc { class: c.clone(), auc: curve.as_ref().map(|r| r.auc) });
    }

    let evals: Vec<ImageEval> = images
        .iter()
        .map(|im| ImageEval { detections: im.detections.clone(), ground_truths: im.ground_truths.clone() })
        .collect();
    let metadata = RunMetadata {
        tool: format!("biopay {}", env!("CARGO_PKG_VERSION")),
        config_digest: config.digest(),
        predictions_sha256: pred_digest,
        ground_truth_sha256: gt_digest,
        seed: config.folds.seed,
        folds: config.folds.folds,
        per_class: config.folds.per_class,
        images: images.len(),
        class_counts: classes.iter().map(|c| (c.clone(), catalog.get(c).map_or(0, Vec::len))).collect(),
        unmatched_predictions: unmatched,
        map: MapSuite::compute(exec, &evals, ApMethod::AllPoints),
        ar: ArSuite::compute(exec, &evals),
        auc,
    };
    let mut json = serde_json::to_string_pretty(&metadata)?;
    json.push('\n');
    reports::write(out_dir, "run.json", &json)?;
    files.push("run.json".into());
    Ok(EvalOutcome { metadata, average, files })
}
