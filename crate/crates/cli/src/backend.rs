//! Remote detector speaking a small JSON contract:
//! `POST url {event_id, camera_id, captured_at, image_base64?}` →
//! `{"detections": [{"class", "score", "box"}]}`.

use std::time::Duration;

use base64::Engine;
use biopay_core::ingest::{BackendError, DetectorBackend, ImageJob, ImageStore, SpeciesDetection};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize)]
struct InferRequest<'a> {
    event_id: &'a str,
    camera_id: &'a str,
    captured_at: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_base64: Option<String>,
}

#[derive(Debug, Deserialize)]
struct InferResponse {
    detections: Vec<SpeciesDetection>,
}

pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
    images: Option<ImageStore>,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration, images: Option<ImageStore>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpBackend { url: url.into(), agent, images }
    }
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
            BackendError::Invalid(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => BackendError::Unavailable(format!("HTTP {code}")),
        ureq::Error::Json(e) => BackendError::Invalid(e.to_string()),
        other => BackendError::Unavailable(other.to_string()),
    }
}

impl DetectorBackend for HttpBackend {
    fn infer(&self, job: &ImageJob) -> Result<Vec<SpeciesDetection>, BackendError> {
        let image_base64 = self
            .images
            .as_ref()
            .and_then(|s| s.get(&job.image_ref).ok())
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b));
        let body = InferRequest {
            event_id: &job.event_id,
            camera_id: &job.camera_id,
            captured_at: job.captured_at,
            image_base64,
        };
        let resp = self.agent.post(&self.url).send_json(&body).map_err(classify)?;
        let parsed: InferResponse = resp.into_body().read_json().map_err(classify)?;
        Ok(parsed.detections)
    }
}
