//! Cameras, image storage, audit trail, and turning uploads into jobs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::event::{EventSource, SpeciesDetection};
use super::smtp::MailEnvelope;
use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sensitivity {
    Low,
    Mid,
    #[default]
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { width: 1920, height: 1072 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub camera_id: String,
    #[serde(default)]
    pub resolution: Resolution,
    #[serde(default)]
    pub trigger_sensitivity: Sensitivity,
    #[serde(default = "default_range")]
    pub trigger_range_m: f64,
    #[serde(default)]
    pub uplink: String,
}

fn default_range() -> f64 {
    9.0
}

impl CameraConfig {
    pub fn new(camera_id: impl Into<String>) -> Self {
        CameraConfig {
            camera_id: camera_id.into(),
            resolution: Resolution::default(),
            trigger_sensitivity: Sensitivity::High,
            trigger_range_m: default_range(),
            uplink: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.camera_id.trim().is_empty() {
            return Err("camera_id is empty".into());
        }
        if self.resolution.width == 0 || self.resolution.height == 0 {
            return Err(format!("camera {}: resolution must be positive", self.camera_id));
        }
        if !(self.trigger_range_m > 0.0 && self.trigger_range_m.is_finite()) {
            return Err(format!("camera {}: trigger_range_m must be positive", self.camera_id));
        }
        Ok(())
    }
}

/// Known cameras. An open registry accepts any camera id.
#[derive(Debug, Clone, Default)]
pub struct CameraRegistry {
    cameras: Option<BTreeMap<String, CameraConfig>>,
}

impl CameraRegistry {
    pub fn open() -> Self {
        CameraRegistry { cameras: None }
    }

    pub fn with_cameras(cameras: impl IntoIterator<Item = CameraConfig>) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for c in cameras {
            c.validate()?;
            if map.insert(c.camera_id.clone(), c.clone()).is_some() {
                return Err(format!("camera {} listed twice", c.camera_id));
            }
        }
        Ok(CameraRegistry { cameras: Some(map) })
    }

    pub fn is_known(&self, camera_id: &str) -> bool {
        self.cameras.as_ref().is_none_or(|m| m.contains_key(camera_id))
    }

    pub fn get(&self, camera_id: &str) -> Option<&CameraConfig> {
        self.cameras.as_ref()?.get(camera_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Rejected,
    DeadLetter,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    pub kind: AuditKind,
    pub subject: String,
    pub reason: String,
}

/// Append-only record of rejections and dead letters, optionally mirrored
/// to a JSON-lines file.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
    file: Option<Mutex<fs::File>>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog::default()
    }

    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { entries: Mutex::default(), file: Some(Mutex::new(file)) })
    }

    pub fn record(&self, entry: AuditEntry) {
        tracing::warn!(kind = ?entry.kind, subject = %entry.subject, reason = %entry.reason, "audit");
        if let Some(f) = &self.file {
            let mut line = serde_json::to_string(&entry).expect("audit entry serializes");
            line.push('\n');
            if let Err(e) = f.lock().write_all(line.as_bytes()) {
                tracing::error!(error = %e, "could not write audit log");
            }
        }
        self.entries.lock().push(entry);
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().clone()
    }

    pub fn count(&self, kind: AuditKind) -> usize {
        self.entries.lock().iter().filter(|e| e.kind == kind).count()
    }
}

/// Content-addressed image directory; the ledger and events hold only the
/// returned reference.
#[derive(Debug, Clone)]
pub struct ImageStore {
    dir: PathBuf,
}

impl ImageStore {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ImageStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, image_ref: &str) -> PathBuf {
        self.dir.join(image_ref)
    }

    /// Writes `bytes` under the event id unless already present.
    pub fn put(&self, event_id: &str, extension: &str, bytes: &[u8]) -> std::io::Result<String> {
        let name = format!("{event_id}.{extension}");
        let path = self.dir.join(&name);
        if !path.exists() {
            let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(name)
    }

    pub fn get(&self, image_ref: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.path_for(image_ref))
    }
}

/// Work item handed to a detector backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageJob {
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub image_ref: String,
    pub source: EventSource,
    /// Pre-labelled detections carried by replay traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<SpeciesDetection>>,
}

/// Raw upload before validation, from either mail or HTTP.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub camera_id: Option<String>,
    pub captured_at: Option<DateTime<Utc>>,
    pub image: Option<(String, Vec<u8>)>,
    pub source: EventSource,
}

impl Upload {
    pub fn from_envelope(env: &MailEnvelope) -> Self {
        Upload {
            camera_id: env.camera_id().map(str::to_string),
            captured_at: env.date,
            image: env.first_image().map(|a| (extension_of(a.filename.as_deref(), &a.content_type), a.bytes.clone())),
            source: EventSource::Smtp,
        }
    }
}

pub fn extension_of(filename: Option<&str>, content_type: &str) -> String {
    if let Some(ext) = filename.and_then(|f| f.rsplit_once('.')).map(|(_, e)| e.to_ascii_lowercase()) {
        if !ext.is_empty() && ext.len() <= 5 && ext.chars().all(|c| c.is_ascii_alphanumeric()) {
            return ext;
        }
    }
    match content_type {
        "image/png" => "png".into(),
        _ => "jpg".into(),
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no camera id could be derived")]
    MissingCameraId,
    #[error("unknown camera {0:?}")]
    UnknownCamera(String),
    #[error("no image attachment")]
    MissingAttachment,
    #[error("image store: {0}")]
    Io(#[from] std::io::Error),
}

/// Digest of (camera, capture time, image bytes); retransmissions of the
/// same image collide, different images never do.
pub fn event_digest(camera_id: &str, captured_at: DateTime<Utc>, image: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update((camera_id.len() as u64).to_le_bytes());
    h.update(camera_id.as_bytes());
    let ts = captured_at.to_rfc3339();
    h.update((ts.len() as u64).to_le_bytes());
    h.update(ts.as_bytes());
    h.update(image);
    hex::encode(h.finalize())
}

/// Validates an upload, stores its image, and builds the job. Capture time
/// falls back to the clock (whole seconds) when the upload carries none.
pub fn extract_event(
    upload: &Upload,
    registry: &CameraRegistry,
    store: &ImageStore,
    audit: &AuditLog,
    clock: &dyn Clock,
) -> Result<ImageJob, IngestError> {
    let reject = |subject: &str, err: IngestError| {
        audit.record(AuditEntry {
            at: clock.now(),
            kind: AuditKind::Rejected,
            subject: subject.to_string(),
            reason: err.to_string(),
        });
        err
    };
    let Some(camera_id) = upload.camera_id.as_deref().filter(|c| !c.trim().is_empty()) else {
        return Err(reject("?", IngestError::MissingCameraId));
    };
    if !registry.is_known(camera_id) {
        return Err(reject(camera_id, IngestError::UnknownCamera(camera_id.to_string())));
    }
    let Some((ext, bytes)) = &upload.image else {
        return Err(reject(camera_id, IngestError::MissingAttachment));
    };
    let captured_at = upload.captured_at.unwrap_or_else(|| clock.now().trunc_subsecs(0));
    let event_id = event_digest(camera_id, captured_at, bytes);
    let image_ref = store.put(&event_id, ext, bytes)?;
    Ok(ImageJob {
        event_id,
        camera_id: camera_id.to_string(),
        captured_at,
        image_ref,
        source: upload.source,
        labels: None,
    })
}
