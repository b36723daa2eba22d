//! Event intake: camera mail, uploads, annotations, detectors, and replay.

pub mod detector;
mod event;
pub mod job;
pub mod mime;
pub mod replay;
pub mod smtp;
pub mod voc;

pub use detector::{
    detect, detect_with, filter_detections, BackendError, DeadLetter, DetectConfig, DetectorBackend, FixtureBackend,
    RetryPolicy, DEFAULT_CONF_THRESHOLD,
};
pub use event::{DetectionEvent, EventSource, SpeciesDetection};
pub use job::{
    event_digest, extract_event, AuditEntry, AuditKind, AuditLog, CameraConfig, CameraRegistry, ImageJob, ImageStore,
    IngestError, Upload,
};
pub use replay::{synthesize_trace, Replay, Trace, TraceRecord, TraceWarning};
pub use smtp::{smtp_receive, MailEnvelope, SmtpConfig, SmtpServer, SmtpSession};
pub use voc::{parse_voc_xml, serialize_voc_xml, AnnotationDoc, ImageSize, PixelBox, VocError, VocObject};
