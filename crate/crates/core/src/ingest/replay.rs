//! JSON-lines detection traces: parsing, paced replay, and synthesis.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::event::{EventSource, SpeciesDetection};
use super::job::ImageJob;
use crate::geom::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    #[serde(default)]
    pub detections: Vec<SpeciesDetection>,
}

impl TraceRecord {
    /// The explicit id, or a digest of the record's content.
    pub fn resolved_event_id(&self) -> String {
        if let Some(id) = self.event_id.as_ref().filter(|s| !s.is_empty()) {
            return id.clone();
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(&self.camera_id, self.captured_at, &self.detections)).expect("serializable"));
        hex::encode(h.finalize())
    }

    pub fn to_job(&self) -> ImageJob {
        let event_id = self.resolved_event_id();
        ImageJob {
            image_ref: format!("trace:{event_id}"),
            event_id,
            camera_id: self.camera_id.clone(),
            captured_at: self.captured_at,
            source: EventSource::Replay,
            labels: Some(self.detections.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<TraceWarning>,
}

impl Trace {
    /// Reads one record per line. Malformed lines are skipped and reported;
    /// blank lines are ignored.
    pub fn read<R: BufRead>(reader: R) -> io::Result<Trace> {
        let mut trace = Trace::default();
        for (i, line) in reader.split(b'\n').enumerate() {
            let line = line?;
            let text = String::from_utf8_lossy(&line);
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceRecord>(text) {
                Ok(r) if r.camera_id.is_empty() => trace.warn(i + 1, "empty camera_id".into()),
                Ok(r) => trace.records.push(r),
                Err(e) => trace.warn(i + 1, e.to_string()),
            }
        }
        Ok(trace)
    }

    fn warn(&mut self, line: usize, message: String) {
        tracing::warn!(line, %message, "skipping malformed trace line");
        self.warnings.push(TraceWarning { line, message });
    }

    pub fn write<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Jobs in capture order; records sharing a timestamp keep file order.
    pub fn jobs(&self) -> Vec<ImageJob> {
        let mut order: Vec<&TraceRecord> = self.records.iter().collect();
        order.sort_by_key(|r| r.captured_at);
        order.into_iter().map(TraceRecord::to_job).collect()
    }
}

/// Iterator over jobs that sleeps between emissions so inter-arrival gaps
/// are the trace gaps divided by `speed`. Speed 0 never sleeps.
pub struct Replay<'s> {
    jobs: std::vec::IntoIter<ImageJob>,
    speed: f64,
    prev: Option<DateTime<Utc>>,
    sleep: Box<dyn FnMut(Duration) + 's>,
}

impl<'s> Replay<'s> {
    pub fn new(trace: &Trace, speed: f64) -> Self {
        Self::with_sleeper(trace, speed, std::thread::sleep)
    }

    pub fn with_sleeper(trace: &Trace, speed: f64, sleep: impl FnMut(Duration) + 's) -> Self {
        Replay {
            jobs: trace.jobs().into_iter(),
            speed: if speed.is_finite() && speed > 0.0 { speed } else { 0.0 },
            prev: None,
            sleep: Box::new(sleep),
        }
    }
}

impl Iterator for Replay<'_> {
    type Item = ImageJob;

    fn next(&mut self) -> Option<ImageJob> {
        let job = self.jobs.next()?;
        if self.speed > 0.0 {
            if let Some(prev) = self.prev {
                let gap = (job.captured_at - prev).to_std().unwrap_or_default();
                if !gap.is_zero() {
                    (self.sleep)(gap.div_f64(self.speed));
                }
            }
        }
        self.prev = Some(job.captured_at);
        Some(job)
    }
}

/// One-detection-per-event trace realizing the given species histogram.
/// Events are spread over `cameras` cameras at one-minute spacing in a
/// seed-determined interleaving.
pub fn synthesize_trace(counts: &[(String, u64)], start: DateTime<Utc>, cameras: usize, seed: u64) -> Vec<TraceRecord> {
    let mut species: Vec<&str> = counts
        .iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s.as_str(), *n as usize))
        .collect();
    species.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cameras = cameras.max(1);
    let bbox = BoundingBox::new(400.0, 300.0, 900.0, 800.0).expect("fixed box");
    species
        .into_iter()
        .enumerate()
        .map(|(i, s)| TraceRecord {
            event_id: Some(format!("synthetic-{i:06}")),
            camera_id: format!("camera{:02}", i % cameras + 1),
            captured_at: start + TimeDelta::minutes(i as i64),
            detections: vec![SpeciesDetection { species: s.to_string(), score: 0.9, bbox }],
        })
        .collect()
}
