//! Detector backends and the confidence/NMS filter applied to their output.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{DetectionEvent, SpeciesDetection};
use super::job::ImageJob;
use crate::geom::{nms, ClassId, Detection, DEFAULT_NMS_IOU};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an invalid response: {0}")]
    Invalid(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, BackendError::Invalid(_))
    }
}

pub trait DetectorBackend: Send + Sync {
    fn infer(&self, job: &ImageJob) -> Result<Vec<SpeciesDetection>, BackendError>;
}

/// Serves canned detections: by event id when registered, otherwise the
/// labels a replay trace attached to the job.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    by_event: HashMap<String, Vec<SpeciesDetection>>,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, event_id: impl Into<String>, detections: Vec<SpeciesDetection>) {
        self.by_event.insert(event_id.into(), detections);
    }
}

impl DetectorBackend for FixtureBackend {
    fn infer(&self, job: &ImageJob) -> Result<Vec<SpeciesDetection>, BackendError> {
        if let Some(d) = self.by_event.get(&job.event_id) {
            return Ok(d.clone());
        }
        job.labels
            .clone()
            .ok_or_else(|| BackendError::Unavailable(format!("no fixture for event {}", job.event_id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): doubling, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub retry: RetryPolicy,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_threshold: DEFAULT_NMS_IOU,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub event_id: String,
    pub camera_id: String,
    pub reason: String,
    pub attempts: u32,
}

/// Keeps detections scoring at least `conf_threshold`, then runs per-species
/// NMS. Survivors come back in descending score order.
pub fn filter_detections(raw: &[SpeciesDetection], conf_threshold: f64, nms_threshold: f64) -> Vec<SpeciesDetection> {
    let species: Vec<&str> = raw
        .iter()
        .map(|d| d.species.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dets: Vec<Detection> = raw
        .iter()
        .filter(|d| d.score >= conf_threshold)
        .map(|d| Detection {
            bbox: d.bbox,
            class_id: ClassId(species.binary_search(&d.species.as_str()).expect("species indexed")),
            score: d.score,
        })
        .collect();
    nms(&dets, nms_threshold)
        .into_iter()
        .map(|d| SpeciesDetection { species: species[d.class_id.0].to_string(), score: d.score, bbox: d.bbox })
        .collect()
}

fn check(raw: &[SpeciesDetection]) -> Result<(), BackendError> {
    for (i, d) in raw.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(BackendError::Invalid(format!("detection {i} has score {}", d.score)));
        }
        if d.species.is_empty() {
            return Err(BackendError::Invalid(format!("detection {i} has no class")));
        }
    }
    Ok(())
}

/// Runs the backend with retries, sleeping through `sleep` between attempts.
pub fn detect_with(
    job: &ImageJob,
    backend: &dyn DetectorBackend,
    config: &DetectConfig,
    sleep: &mut dyn FnMut(Duration),
) -> Result<DetectionEvent, DeadLetter> {
    let attempts = config.retry.max_attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        if attempt > 1 {
            sleep(config.retry.backoff(attempt - 1));
        }
        match backend.infer(job).and_then(|raw| check(&raw).map(|_| raw)) {
            Ok(raw) => {
                return Ok(DetectionEvent {
                    event_id: job.event_id.clone(),
                    camera_id: job.camera_id.clone(),
                    captured_at: job.captured_at,
                    image_ref: job.image_ref.clone(),
                    detections: filter_detections(&raw, config.conf_threshold, config.nms_threshold),
                    source: job.source,
                });
            }
            Err(e) => {
                tracing::debug!(event = %job.event_id, attempt, error = %e, "detector attempt failed");
                let retry = e.is_retryable();
                last = Some((e, attempt));
                if !retry {
                    break;
                }
            }
        }
    }
    let (err, attempts) = last.expect("at least one attempt");
    Err(DeadLetter {
        event_id: job.event_id.clone(),
        camera_id: job.camera_id.clone(),
        reason: err.to_string(),
        attempts,
    })
}

pub fn detect(job: &ImageJob, backend: &dyn DetectorBackend, config: &DetectConfig) -> Result<DetectionEvent, DeadLetter> {
    detect_with(job, backend, config, &mut std::thread::sleep)
}
