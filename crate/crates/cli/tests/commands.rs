mod common;

use std::fs;
use std::sync::Arc;

use biopay_cli::commands::{cmd_replay, cmd_replay_counts, parse_counts, ReplayOptions};
use biopay_cli::config::RunConfig;
use biopay_cli::eval::run_eval;
use biopay_core::geom::BoundingBox;
use biopay_core::ingest::{synthesize_trace, SpeciesDetection, Trace, TraceRecord};
use biopay_core::ledger::{Ledger, PaymentRow, PaymentTable, GUARDIAN};
use chrono::{TimeZone, Utc};
use common::{biopay, classes, stdout, write_dataset};
use proptest::prelude::*;

fn table7() -> Vec<(String, u64)> {
    [
        ("Canis mesomelas", 34),
        ("Hystrix cristata", 37),
        ("Crocuta crocuta", 58),
        ("Loxodonta africana", 148),
        ("Acinonyx jubatus", 222),
        ("Papio sp", 748),
        ("Rhinocerotidae", 998),
        ("Connochaetes taurinus", 1022),
        ("Tragelaphus oryx", 1058),
        ("Giraffa camelopardalis", 2646),
        ("Panthera leo", 4391),
        ("Equus quagga", 7158),
    ]
    .into_iter()
    .map(|(s, n)| (s.to_string(), n))
    .collect()
}

fn trace_text(records: &[TraceRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    Trace::write(records, &mut buf).unwrap();
    buf
}

#[test]
fn replay_matches_counts_and_conserves() {
    let config = RunConfig::default();
    let counts = table7();
    let start = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap();
    let text = trace_text(&synthesize_trace(&counts, start, 27, 7));
    let ledger = Arc::new(Ledger::in_memory());
    let total = 13 * 10_000u128;
    let mut checkpoints = 0;
    let options = ReplayOptions { speed: 0.0, checkpoint_every: Some(1000) };
    let summary = cmd_replay(&config, ledger.clone(), text.as_slice(), &options, &mut |l| {
        checkpoints += 1;
        assert_eq!(l.total_balance(), total);
    })
    .unwrap();
    assert_eq!(checkpoints, 19);
    assert!(summary.render().starts_with("18520 detection events, £185.20 paid\n"));
    assert_eq!(summary.guardian_balance, 28_520);

    let expected = cmd_replay_counts(&config, &counts).unwrap();
    for row in &expected.rows {
        assert_eq!(summary.payments.payment_for(&row.species), Some(row.payment), "{}", row.species);
        assert_eq!(ledger.balance(&row.species).unwrap(), 10_000 - row.payment);
    }
    assert_eq!(summary.payments.total_payment, 18_520);
}

#[test]
fn empty_trace_and_unknown_species() {
    let config = RunConfig::default();
    let s = cmd_replay(&config, Arc::new(Ledger::in_memory()), &b""[..], &ReplayOptions::default(), &mut |_| {}).unwrap();
    assert_eq!(s.stats, Default::default());
    assert!(s.render().starts_with("0 detection events, £0.00 paid\n"));

    let at = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap();
    let det = |species: &str| SpeciesDetection {
        species: species.into(),
        score: 0.9,
        bbox: BoundingBox::new(1.0, 1.0, 50.0, 50.0).unwrap(),
    };
    let records = vec![
        TraceRecord { event_id: Some("a".into()), camera_id: "c1".into(), captured_at: at, detections: vec![det("Felis catus")] },
        TraceRecord { event_id: Some("b".into()), camera_id: "c1".into(), captured_at: at, detections: vec![det("Panthera leo")] },
        TraceRecord { event_id: Some("b".into()), camera_id: "c1".into(), captured_at: at, detections: vec![det("Panthera leo")] },
        TraceRecord { event_id: Some("c".into()), camera_id: "c1".into(), captured_at: at, detections: vec![] },
    ];
    let mut text = trace_text(&records);
    text.extend_from_slice(b"{not json\n");
    let ledger = Arc::new(Ledger::in_memory());
    let s = cmd_replay(&config, ledger.clone(), text.as_slice(), &ReplayOptions::default(), &mut |_| {}).unwrap();
    assert_eq!(s.stats.dead_letters, 1);
    assert_eq!(s.stats.duplicates, 1);
    assert_eq!(s.stats.blanks, 1);
    assert_eq!(s.stats.detection_events, 1);
    assert_eq!(s.malformed_lines, 1);
    assert_eq!(ledger.balance(GUARDIAN).unwrap(), 10_001);
}

#[test]
fn binary_replay_then_balances() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let start = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap();
    fs::write(&trace, trace_text(&synthesize_trace(&table7(), start, 27, 1))).unwrap();
    let cfg = dir.path().join("biopay.toml");
    fs::write(&cfg, "[ledger]\ndurability = \"os_buffered\"\n").unwrap();
    let journal = dir.path().join("ledger.jsonl");
    let reports = dir.path().join("reports");
    let args = |extra: &[&str]| {
        let mut v = vec!["--config", cfg.to_str().unwrap(), "--journal", journal.to_str().unwrap()];
        v.extend_from_slice(extra);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let a = args(&["replay", "--trace", trace.to_str().unwrap(), "--reports", reports.to_str().unwrap()]);
    let out = biopay(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().next(), Some("18520 detection events, £185.20 paid"));

    let payments = fs::read_to_string(reports.join("payments.csv")).unwrap();
    assert!(payments.ends_with("Total,18520,185.20\n"));
    let table = PaymentTable::from_csv(&payments).unwrap();
    let direct = cmd_replay_counts(&RunConfig::default(), &table7()).unwrap();
    for row in &direct.rows {
        assert_eq!(table.payment_for(&row.species), Some(row.payment));
    }

    let a = args(&["ledger", "balances"]);
    let out = biopay(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("\nguardian,£285.20\n"), "{text}");
    assert!(text.contains("\nEquus quagga,£28.42\n"));

    // a second replay of the same trace pays nothing more
    let a = args(&["replay", "--trace", trace.to_str().unwrap()]);
    let out = biopay(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout(&out).contains("duplicates: 18520\n"), "{}", stdout(&out));
}

#[test]
fn binary_ledger_commands() {
    let out = biopay(&["ledger", "balances"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<_> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.ends_with(",£100.00")));

    let out = biopay(&["ledger", "statement", "--account", "Felis catus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown account"));

    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    let mut csv = String::from("Species,Detections\n");
    for (s, n) in table7() {
        csv.push_str(&format!("{s},{n}\n"));
    }
    fs::write(&counts, csv).unwrap();
    let first = stdout(&biopay(&["ledger", "replay-counts", "--counts", counts.to_str().unwrap()]));
    let second = stdout(&biopay(&["ledger", "replay-counts", "--counts", counts.to_str().unwrap()]));
    assert_eq!(first, second);
    assert!(first.starts_with("Species,Detections,Guardian Payment (GBP)\nCanis mesomelas,34,0.34\n"));
    assert!(first.ends_with("Equus quagga,7158,71.58\nTotal,18520,185.20\n"));
}

#[test]
fn duplicate_roster_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[species]\nroster = [\"Panthera leo\", \"Papio sp\", \"Panthera leo\"]\n").unwrap();
    let out = biopay(&["--config", cfg.to_str().unwrap(), "serve"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("appears twice"));
}

fn eval_config(per_class: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.folds.per_class = per_class;
    c
}

#[test]
fn perfect_predictions_give_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 35, |c, _| c);
    let out = dir.path().join("reports");
    let outcome = run_eval(&eval_config(29), &dir.path().join("pred.jsonl"), &dir.path().join("gt"), &out).unwrap();
    assert_eq!(outcome.metadata.images, 13 * 35);
    assert_eq!(outcome.metadata.map.map, 1.0);
    assert_eq!(outcome.metadata.ar.ar_100, 1.0);
    for (class, m) in &outcome.average.rows {
        assert_eq!(m.values(), [1.0; 5], "{class}");
    }
    for i in 1..=10 {
        let text = fs::read_to_string(out.join(format!("metrics_fold{i}.csv"))).unwrap();
        let rows: Vec<_> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 14);
        for r in &rows[..13] {
            assert!(r.ends_with(",1.0000,1.0000,1.0000,1.0000,1.0000,29"), "{r}");
        }
        assert!(rows[13].starts_with("Average,1.0000,"));
    }
    for a in &outcome.metadata.auc {
        assert_eq!(a.auc, Some(1.0), "{}", a.class);
    }
    assert!(out.join("roc_papio_sp.csv").exists());
    assert!(out.join("roc_blank.csv").exists());
}

#[test]
fn constructed_confusion_matches() {
    let n = 30;
    let classes = classes();
    let k = classes.len();
    // class c loses its first c/2 + 1 images to the next class
    let predict = |c: usize, j: usize| if j <= c / 2 { (c + 1) % k } else { c };
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), n, predict);
    let out = dir.path().join("reports");
    run_eval(&eval_config(29), &dir.path().join("pred.jsonl"), &dir.path().join("gt"), &out).unwrap();

    let mut expected = vec![vec![0u64; k]; k];
    for (c, row) in expected.iter_mut().enumerate() {
        for j in 0..n {
            row[predict(c, j)] += 1;
        }
    }
    let mut text = String::from("truth \\ predicted");
    for c in &classes {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    for (c, row) in classes.iter().zip(&expected) {
        text.push_str(c);
        for v in row {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    assert_eq!(fs::read_to_string(out.join("confusion.csv")).unwrap(), text);
}

#[test]
fn eval_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 31, |c, j| if j % 7 == 3 { (c + 2) % 13 } else { c });
    let (pred, gt) = (dir.path().join("pred.jsonl"), dir.path().join("gt"));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = biopay(&["eval", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 10 + 1 + 1 + 13 + 1);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn eval_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 29, |c, _| c);
    let gt = dir.path().join("gt");
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"filename\": \"x.jpg\", \"detections\": 3}\n").unwrap();
    assert!(run_eval(&eval_config(29), &bad, &gt, &dir.path().join("r")).is_err());
    // too few images for the fold protocol
    let pred = dir.path().join("pred.jsonl");
    assert!(run_eval(&eval_config(30), &pred, &gt, &dir.path().join("r")).is_err());
}

fn arb_table() -> impl Strategy<Value = PaymentTable> {
    prop::collection::vec(("[A-Za-z][A-Za-z ,\"']{0,20}", 0u64..100_000, 0u64..10_000_000), 0..15).prop_map(|rows| {
        PaymentTable::from_rows(
            rows.into_iter()
                .filter(|(s, _, _)| s != "Total")
                .map(|(species, detections, payment)| PaymentRow { species, detections, payment })
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn payment_csv_round_trips(t in arb_table()) {
        let text = t.to_csv();
        let back = PaymentTable::from_csv(&text).unwrap();
        prop_assert_eq!(back.to_csv(), text);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn counts_csv_and_json_agree(counts in prop::collection::btree_map("[A-Z][a-z]{1,8}( [a-z]{2,8})?", 0u64..50_000, 0..12)) {
        let mut csv = String::from("Species,Detections\n");
        for (s, n) in &counts {
            csv.push_str(&format!("{s},{n}\n"));
        }
        let json = serde_json::to_string(&counts).unwrap();
        let expect: Vec<_> = counts.into_iter().collect();
        prop_assert_eq!(parse_counts(&csv).unwrap(), expect.clone());
        prop_assert_eq!(parse_counts(&json).unwrap(), expect);
    }
}
