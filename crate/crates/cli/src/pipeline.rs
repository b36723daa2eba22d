//! Detection → ledger flow shared by `serve` and `replay`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use biopay_core::clock::{Clock, SystemClock};
use biopay_core::ingest::{
    detect, AuditEntry, AuditKind, AuditLog, DetectConfig, DetectionEvent, DetectorBackend, ImageJob,
};
use biopay_core::ledger::{
    JournalOptions, Ledger, PaymentRow, PaymentTable, PayoutPolicy, RestoreReport, GUARDIAN,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Queued,
    Applied,
    Duplicate,
    DeadLetter,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub status: EventStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<DetectionEvent>,
    pub paid_pence: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Default)]
struct Counters {
    events: AtomicU64,
    detection_events: AtomicU64,
    blanks: AtomicU64,
    detections: AtomicU64,
    dead_letters: AtomicU64,
    duplicates: AtomicU64,
    failed: AtomicU64,
    paid: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    pub events: u64,
    pub detection_events: u64,
    pub blanks: u64,
    pub detections: u64,
    pub dead_letters: u64,
    pub duplicates: u64,
    pub failed: u64,
    pub paid_pence: u64,
}

pub struct Pipeline {
    ledger: Arc<Ledger>,
    backend: Arc<dyn DetectorBackend>,
    detect: DetectConfig,
    policy: PayoutPolicy,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
    events: Mutex<HashMap<String, EventRecord>>,
    counters: Counters,
}

impl Pipeline {
    pub fn new(
        ledger: Arc<Ledger>,
        backend: Arc<dyn DetectorBackend>,
        detect: DetectConfig,
        policy: PayoutPolicy,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Pipeline {
            ledger,
            backend,
            detect,
            policy,
            audit,
            clock,
            events: Mutex::default(),
            counters: Counters::default(),
        }
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    /// Records a job as accepted but not yet processed. Returns false when
    /// the event id is already known.
    pub fn mark_queued(&self, job: &ImageJob) -> bool {
        let mut events = self.events.lock().expect("event map");
        if events.contains_key(&job.event_id) || self.ledger.is_applied(&job.event_id) {
            return false;
        }
        events.insert(
            job.event_id.clone(),
            EventRecord { event_id: job.event_id.clone(), status: EventStatus::Queued, event: None, paid_pence: 0, reason: None },
        );
        true
    }

    pub fn event(&self, event_id: &str) -> Option<EventRecord> {
        self.events.lock().expect("event map").get(event_id).cloned()
    }

    fn dead_letter(&self, event_id: &str, reason: String) {
        self.counters.dead_letters.fetch_add(1, Ordering::Relaxed);
        self.audit.record(AuditEntry {
            at: self.clock.now(),
            kind: AuditKind::DeadLetter,
            subject: event_id.to_string(),
            reason,
        });
    }

    /// Detects, then pays. Safe to call concurrently and more than once per
    /// event; the ledger's dedup keeps payment exactly-once.
    pub fn process(&self, job: &ImageJob) -> EventRecord {
        self.counters.events.fetch_add(1, Ordering::Relaxed);
        let record = match detect(job, self.backend.as_ref(), &self.detect) {
            Err(dl) => {
                let reason = format!("detector failed after {} attempt(s): {}", dl.attempts, dl.reason);
                self.dead_letter(&job.event_id, reason.clone());
                EventRecord { event_id: job.event_id.clone(), status: EventStatus::DeadLetter, event: None, paid_pence: 0, reason: Some(reason) }
            }
            Ok(event) => self.pay(event),
        };
        let mut events = self.events.lock().expect("event map");
        // a duplicate delivery must not hide the original outcome
        let keep_existing = record.status == EventStatus::Duplicate
            && events.get(&record.event_id).is_some_and(|r| r.status != EventStatus::Queued);
        if !keep_existing {
            events.insert(record.event_id.clone(), record.clone());
        }
        record
    }

    fn pay(&self, event: DetectionEvent) -> EventRecord {
        let c = &self.counters;
        let mut record = EventRecord {
            event_id: event.event_id.clone(),
            status: EventStatus::Applied,
            event: None,
            paid_pence: 0,
            reason: None,
        };
        match self.ledger.apply_detection_event(&event, &self.policy) {
            Ok(outcome) if outcome.duplicate => {
                c.duplicates.fetch_add(1, Ordering::Relaxed);
                record.status = EventStatus::Duplicate;
            }
            Ok(outcome) => {
                if event.is_blank() {
                    c.blanks.fetch_add(1, Ordering::Relaxed);
                } else {
                    c.detection_events.fetch_add(1, Ordering::Relaxed);
                    c.detections.fetch_add(event.detections.len() as u64, Ordering::Relaxed);
                }
                record.paid_pence = outcome.paid();
                c.paid.fetch_add(record.paid_pence, Ordering::Relaxed);
                if !outcome.skipped.is_empty() {
                    record.reason = Some(format!("{} payout(s) skipped for insufficient funds", outcome.skipped.len()));
                }
            }
            Err(e) if e.is_dead_letter() => {
                self.dead_letter(&event.event_id, e.to_string());
                record.status = EventStatus::DeadLetter;
                record.reason = Some(e.to_string());
            }
            Err(e) => {
                tracing::error!(event = %event.event_id, error = %e, "ledger commit failed");
                c.failed.fetch_add(1, Ordering::Relaxed);
                record.status = EventStatus::Failed;
                record.reason = Some(e.to_string());
            }
        }
        record.event = Some(event);
        record
    }

    pub fn stats(&self) -> PipelineStats {
        let c = &self.counters;
        PipelineStats {
            events: c.events.load(Ordering::Relaxed),
            detection_events: c.detection_events.load(Ordering::Relaxed),
            blanks: c.blanks.load(Ordering::Relaxed),
            detections: c.detections.load(Ordering::Relaxed),
            dead_letters: c.dead_letters.load(Ordering::Relaxed),
            duplicates: c.duplicates.load(Ordering::Relaxed),
            failed: c.failed.load(Ordering::Relaxed),
            paid_pence: c.paid.load(Ordering::Relaxed),
        }
    }
}

/// Opens the configured journal (or an in-memory ledger) and makes sure
/// every roster account and the guardian exist.
pub fn open_ledger(config: &RunConfig, journal: Option<&Path>) -> Result<(Ledger, Option<RestoreReport>)> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let (ledger, report) = match journal.or(config.ledger.journal.as_deref()) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let options = JournalOptions { durability: config.ledger.durability, snapshot_every: config.ledger.snapshot_every };
            let (l, r) = Ledger::open(path, options, clock).with_context(|| format!("opening journal {}", path.display()))?;
            if let Some(at) = r.truncated_at {
                tracing::warn!(offset = at, reason = ?r.truncation_reason, "journal tail was unreadable and has been dropped");
            }
            (l, Some(r))
        }
        None => (Ledger::in_memory_with_clock(clock), None),
    };
    ledger.ensure_accounts(config.species.roster.iter().map(String::as_str), config.ledger.initial_credit)?;
    Ok((ledger, report))
}

/// Guardian earnings per roster species, read back from the journal.
pub fn payment_table(ledger: &Ledger, roster: &[String]) -> PaymentTable {
    let mut per: HashMap<&str, (u64, u64)> = HashMap::new();
    let transfers = ledger.transfers();
    for t in &transfers {
        if t.to == GUARDIAN && t.event_id.is_some() {
            let e = per.entry(t.from.as_str()).or_default();
            e.0 += 1;
            e.1 += t.amount;
        }
    }
    PaymentTable::from_rows(
        roster
            .iter()
            .map(|s| {
                let (detections, payment) = per.get(s.as_str()).copied().unwrap_or_default();
                PaymentRow { species: s.clone(), detections, payment }
            })
            .collect(),
    )
}
