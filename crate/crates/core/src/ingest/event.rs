use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geom::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventSource {
    Smtp,
    Http,
    Replay,
}

/// A detection labelled with the species name rather than a model index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesDetection {
    #[serde(rename = "class")]
    pub species: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// One camera trigger after detection and filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub image_ref: String,
    pub detections: Vec<SpeciesDetection>,
    pub source: EventSource,
}

impl DetectionEvent {
    pub fn is_blank(&self) -> bool {
        self.detections.is_empty()
    }
}
