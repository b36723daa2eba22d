#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use biopay_cli::eval::PredictionLine;
use biopay_core::geom::BoundingBox;
use biopay_core::ingest::{serialize_voc_xml, AnnotationDoc, ImageSize, PixelBox, SpeciesDetection, VocObject};

pub fn biopay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biopay"))
        .args(args)
        .env_remove("BIOPAY_JOURNAL")
        .env("RUST_LOG", "warn")
        .output()
        .expect("running biopay")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Thirteen-class layout: the twelve default species then Blank.
pub fn classes() -> Vec<String> {
    biopay_cli::config::RunConfig::default().species.classes()
}

fn gt_box(j: usize) -> PixelBox {
    let x = 20 + (j % 17) as u32 * 60;
    let y = 30 + (j % 11) as u32 * 40;
    PixelBox { xmin: x, ymin: y, xmax: x + 300 + (j % 5) as u32 * 40, ymax: y + 200 + (j % 3) as u32 * 50 }
}

/// Writes `per_class` images per class under `dir/gt` and a predictions file
/// at `dir/pred.jsonl`. `predict(truth, j)` names the class the detector
/// reports for image `j` of class `truth`; Blank means no detection.
pub fn write_dataset(dir: &Path, per_class: usize, predict: impl Fn(usize, usize) -> usize) {
    let classes = classes();
    let blank = classes.len() - 1;
    let gt = dir.join("gt");
    fs::create_dir_all(&gt).unwrap();
    let mut pred = fs::File::create(dir.join("pred.jsonl")).unwrap();
    for (c, name) in classes.iter().enumerate() {
        for j in 0..per_class {
            let filename = format!("c{c:02}_{j:03}.jpg");
            let b = gt_box(j);
            let objects = if c == blank { vec![] } else { vec![VocObject { name: name.clone(), bbox: b }] };
            let doc = AnnotationDoc { filename: filename.clone(), size: ImageSize { width: 1920, height: 1072, depth: 3 }, objects };
            fs::write(gt.join(format!("c{c:02}_{j:03}.xml")), serialize_voc_xml(&doc)).unwrap();
            let p = predict(c, j);
            let detections = if p == blank {
                vec![]
            } else {
                vec![SpeciesDetection { species: classes[p].clone(), score: 0.9, bbox: b.to_bounding_box() }]
            };
            let line = PredictionLine { filename, detections };
            writeln!(pred, "{}", serde_json::to_string(&line).unwrap()).unwrap();
        }
    }
}

pub fn unit_box() -> BoundingBox {
    BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()
}
