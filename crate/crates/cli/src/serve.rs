//! Long-running gateway: SMTP and HTTP intake feeding a detector worker
//! pool that pays out through the ledger.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::{Context, Result};
use biopay_core::clock::{Clock, SystemClock};
use biopay_core::ingest::{
    extract_event, AuditLog, BackendError, CameraRegistry, DetectorBackend, ImageJob, ImageStore,
    IngestError, MailEnvelope, SmtpConfig, SmtpServer, SpeciesDetection, Upload,
};
use crossbeam_channel::{Receiver, Sender};

use crate::backend::HttpBackend;
use crate::config::{BackendKind, RunConfig};
use crate::http;
use crate::pipeline::{open_ledger, EventStatus, Pipeline, PipelineStats};

const QUEUE_DEPTH: usize = 1024;

/// Detector for deployments without a model: uses the labels that came
/// with the upload and refuses jobs that carry none.
struct SubmittedLabels;

impl DetectorBackend for SubmittedLabels {
    fn infer(&self, job: &ImageJob) -> Result<Vec<SpeciesDetection>, BackendError> {
        job.labels.clone().ok_or_else(|| BackendError::Invalid("no labels supplied and no detector configured".into()))
    }
}

/// Shared intake state: validates uploads and queues jobs for the workers.
pub struct Gateway {
    pipeline: Arc<Pipeline>,
    registry: CameraRegistry,
    store: ImageStore,
    clock: Arc<dyn Clock>,
    queue: JobQueue,
}

/// Sender half that can be closed while handlers still hold the gateway.
struct JobQueue(std::sync::Mutex<Option<Sender<ImageJob>>>);

impl JobQueue {
    fn send(&self, job: ImageJob) -> bool {
        let tx = self.0.lock().expect("queue lock").clone();
        tx.is_some_and(|tx| tx.send(job).is_ok())
    }

    fn close(&self) {
        self.0.lock().expect("queue lock").take();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Rejected(IngestError),
    #[error("gateway is shutting down")]
    ShuttingDown,
}

impl Gateway {
    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    /// Stores the image and queues the job. A repeated upload of the same
    /// image returns its id with `Duplicate` and is not queued again.
    pub fn submit(
        &self,
        upload: &Upload,
        labels: Option<Vec<SpeciesDetection>>,
    ) -> Result<(String, EventStatus), SubmitError> {
        let mut job = extract_event(upload, &self.registry, &self.store, self.pipeline.audit(), self.clock.as_ref())
            .map_err(SubmitError::Rejected)?;
        job.labels = labels;
        let id = job.event_id.clone();
        if !self.pipeline.mark_queued(&job) {
            return Ok((id, EventStatus::Duplicate));
        }
        if !self.queue.send(job) {
            return Err(SubmitError::ShuttingDown);
        }
        Ok((id, EventStatus::Queued))
    }

    fn on_mail(&self, env: MailEnvelope) {
        match self.submit(&Upload::from_envelope(&env), None) {
            Ok((id, status)) => tracing::info!(event = %id, ?status, sender = %env.sender, "mail accepted"),
            Err(e) => tracing::warn!(sender = %env.sender, error = %e, "mail rejected"),
        }
    }
}

fn spawn_workers(n: usize, pipeline: &Arc<Pipeline>, rx: Receiver<ImageJob>) -> Vec<JoinHandle<()>> {
    (0..n.max(1))
        .map(|i| {
            let pipeline = pipeline.clone();
            let rx = rx.clone();
            std::thread::Builder::new()
                .name(format!("detector-{i}"))
                .spawn(move || {
                    for job in rx {
                        let r = pipeline.process(&job);
                        tracing::debug!(event = %r.event_id, status = ?r.status, "processed");
                    }
                })
                .expect("spawning worker")
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub http: SocketAddr,
    pub smtp: SocketAddr,
}

/// Runs until `shutdown` resolves, then stops intake, drains the queue and
/// checkpoints the journal.
pub async fn serve(
    config: RunConfig,
    journal: Option<PathBuf>,
    ready: impl FnOnce(Bound),
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<PipelineStats> {
    config.validate()?;
    let g = &config.gateway;
    let (ledger, _) = open_ledger(&config, journal.as_deref())?;
    let ledger = Arc::new(ledger);
    let store = ImageStore::new(&g.image_dir).with_context(|| format!("creating {}", g.image_dir.display()))?;
    let audit = Arc::new(match &g.audit_log {
        Some(p) => AuditLog::with_file(p).with_context(|| format!("opening audit log {}", p.display()))?,
        None => AuditLog::in_memory(),
    });
    let backend: Arc<dyn DetectorBackend> = match config.detector.backend {
        BackendKind::Fixture => Arc::new(SubmittedLabels),
        BackendKind::Http => Arc::new(HttpBackend::new(
            config.detector.url.clone().unwrap_or_default(),
            Duration::from_millis(config.detector.timeout_ms),
            Some(store.clone()),
        )),
    };
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let pipeline = Arc::new(Pipeline::new(
        ledger.clone(),
        backend,
        config.detector.detect_config(),
        config.ledger.policy(),
        audit,
        clock.clone(),
    ));
    let (tx, rx) = crossbeam_channel::bounded(QUEUE_DEPTH);
    let workers = spawn_workers(config.detector.workers, &pipeline, rx);
    let gateway = Arc::new(Gateway {
        pipeline: pipeline.clone(),
        registry: config.camera_registry().map_err(anyhow::Error::msg)?,
        store,
        clock,
        queue: JobQueue(std::sync::Mutex::new(Some(tx))),
    });

    let http_addr = format!("{}:{}", g.bind, g.http_port);
    let listener = tokio::net::TcpListener::bind(&http_addr)
        .await
        .with_context(|| format!("binding HTTP listener on {http_addr}"))?;
    let smtp_addr = format!("{}:{}", g.bind, g.smtp_port);
    let smtp_config = SmtpConfig { max_message_bytes: g.max_message_bytes, ..SmtpConfig::default() };
    let handler_gw = gateway.clone();
    let smtp = SmtpServer::bind(&smtp_addr, smtp_config, Arc::new(move |env| handler_gw.on_mail(env)))
        .with_context(|| format!("binding SMTP listener on {smtp_addr}"))?;
    ready(Bound { http: listener.local_addr()?, smtp: smtp.local_addr() });

    let app = http::router(gateway.clone(), config.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await.context("HTTP server")?;

    tracing::info!("shutting down: draining queue");
    smtp.shutdown();
    gateway.queue.close();
    let joined = tokio::task::spawn_blocking(move || {
        for w in workers {
            let _ = w.join();
        }
    });
    joined.await.context("joining workers")?;
    ledger.checkpoint().context("final checkpoint")?;
    Ok(pipeline.stats())
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn termination() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
