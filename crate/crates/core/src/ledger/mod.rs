//! The system of record: species and guardian accounts, idempotent event
//! payouts and a durable append-only journal.

mod journal;
mod money;
mod payments;
mod state;

pub use journal::{JournalOptions, RestoreReport, Durability};
pub use money::{format_gbp, parse_gbp};
pub use payments::{replay_counts, PaymentRow, PaymentTable};
pub use state::{
    Account, EventOutcome, Granularity, InsufficientFunds, JournalEntry, LedgerState,
    PayoutPolicy, SkippedPayout, Statement, TransferRecord,
};

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::ingest::DetectionEvent;
use journal::JournalWriter;

pub const GUARDIAN: &str = "guardian";
/// £100 in pence.
pub const DEFAULT_INITIAL_CREDIT: u64 = 10_000;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("account {0:?} already exists")]
    DuplicateAccount(String),
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("transfer amount must be positive")]
    ZeroAmount,
    #[error("cannot transfer from {0:?} to itself")]
    SameAccount(String),
    #[error("account {account:?} holds {balance}, {requested} requested")]
    InsufficientFunds {
        account: String,
        balance: u64,
        requested: u64,
    },
    #[error("event {event_id:?} references unknown species {species:?}")]
    UnknownSpecies { event_id: String, species: Vec<String> },
    #[error("event id must not be empty")]
    EmptyEventId,
    #[error("event {0:?} was already applied")]
    DuplicateEvent(String),
    #[error("range end precedes range start")]
    InvertedRange,
    #[error("journal corrupt at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("journal i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

impl LedgerError {
    /// Errors that send the event to the dead-letter queue.
    pub fn is_dead_letter(&self) -> bool {
        matches!(self, LedgerError::UnknownSpecies { .. } | LedgerError::UnknownAccount(_))
    }
}

struct Inner {
    state: LedgerState,
    journal: Option<JournalWriter>,
}

impl Inner {
    /// Write-ahead, then apply. The entry was validated against `state`.
    fn commit(&mut self, entry: JournalEntry) -> Result<(), LedgerError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&entry)?;
        }
        self.state.apply(entry).expect("entry validated before commit");
        if let Some(j) = self.journal.as_mut() {
            j.maybe_snapshot(&self.state)?;
        }
        Ok(())
    }
}

/// Thread-safe ledger. Every mutation is serialized behind one lock, so the
/// journal order is the serial order of operations.
pub struct Ledger {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::in_memory_with_clock(Arc::new(SystemClock))
    }

    pub fn in_memory_with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner { state: LedgerState::default(), journal: None }),
            clock,
        }
    }

    /// Opens (or creates) a journal, restoring any state it already holds.
    pub fn open(
        path: impl AsRef<Path>,
        options: JournalOptions,
        clock: Arc<dyn Clock>,
    ) -> Result<(Self, RestoreReport), LedgerError> {
        let (state, writer, report) = JournalWriter::open(path.as_ref(), options)?;
        let ledger = Self {
            inner: Mutex::new(Inner { state, journal: Some(writer) }),
            clock,
        };
        Ok((ledger, report))
    }

    /// Reads a journal without opening it for writing.
    pub fn restore(path: impl AsRef<Path>) -> Result<(LedgerState, RestoreReport), LedgerError> {
        journal::restore(path.as_ref())
    }

    /// Writes this ledger's full history to a fresh journal file.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let inner = self.inner.lock();
        journal::write_full(path.as_ref(), &inner.state)
    }

    pub fn open_account(&self, account_id: &str, initial_credit: u64) -> Result<Account, LedgerError> {
        let mut inner = self.inner.lock();
        if inner.state.accounts.contains_key(account_id) {
            return Err(LedgerError::DuplicateAccount(account_id.to_string()));
        }
        let entry = JournalEntry::Open {
            account: account_id.to_string(),
            initial_credit,
            at: self.clock.now(),
        };
        inner.commit(entry)?;
        Ok(inner.state.accounts[account_id].clone())
    }

    /// Opens every listed account (plus the guardian) that does not exist yet.
    pub fn ensure_accounts<'a>(
        &self,
        species: impl IntoIterator<Item = &'a str>,
        initial_credit: u64,
    ) -> Result<(), LedgerError> {
        for id in species.into_iter().chain([GUARDIAN]) {
            match self.open_account(id, initial_credit) {
                Ok(_) | Err(LedgerError::DuplicateAccount(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn transfer(&self, from: &str, to: &str, amount: u64) -> Result<TransferRecord, LedgerError> {
        let mut inner = self.inner.lock();
        let at = self.clock.now();
        let record = inner.state.plan_transfer(from, to, amount, None, at)?;
        inner.commit(JournalEntry::Transfer { record: record.clone() })?;
        Ok(record)
    }

    /// Pays the guardian for a detection event.
    ///
    /// Re-applying an event id is a no-op returning a `duplicate` outcome.
    /// An event naming an unknown species is rejected whole.
    pub fn apply_detection_event(
        &self,
        event: &DetectionEvent,
        policy: &PayoutPolicy,
    ) -> Result<EventOutcome, LedgerError> {
        let mut inner = self.inner.lock();
        if inner.state.applied_event_ids.contains(&event.event_id) {
            return Ok(EventOutcome { duplicate: true, ..Default::default() });
        }
        let at = self.clock.now();
        let entry = inner.state.plan_event(event, policy, at)?;
        let outcome = match &entry {
            JournalEntry::Event { transfers, skipped, .. } => EventOutcome {
                transfers: transfers.clone(),
                skipped: skipped.clone(),
                duplicate: false,
            },
            _ => unreachable!("plan_event yields event entries"),
        };
        inner.commit(entry)?;
        Ok(outcome)
    }

    pub fn balance(&self, account_id: &str) -> Result<u64, LedgerError> {
        self.inner
            .lock()
            .state
            .accounts
            .get(account_id)
            .map(|a| a.balance)
            .ok_or_else(|| LedgerError::UnknownAccount(account_id.to_string()))
    }

    /// All accounts in the order they were opened.
    pub fn accounts(&self) -> Vec<Account> {
        self.inner.lock().state.accounts_in_open_order()
    }

    pub fn total_balance(&self) -> u128 {
        self.inner.lock().state.total_balance()
    }

    pub fn total_initial_credit(&self) -> u128 {
        self.inner.lock().state.total_initial_credit()
    }

    pub fn is_applied(&self, event_id: &str) -> bool {
        self.inner.lock().state.applied_event_ids.contains(event_id)
    }

    pub fn transfers(&self) -> Vec<TransferRecord> {
        self.inner.lock().state.transfers().cloned().collect()
    }

    /// Transfers with `applied_at` in `[from, to)`.
    pub fn journal_range(
        &self,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<Vec<TransferRecord>, LedgerError> {
        if let (Some(f), Some(t)) = (from, to) {
            if t < f {
                return Err(LedgerError::InvertedRange);
            }
        }
        Ok(self
            .inner
            .lock()
            .state
            .transfers()
            .filter(|r| from.is_none_or(|f| r.applied_at >= f) && to.is_none_or(|t| r.applied_at < t))
            .cloned()
            .collect())
    }

    pub fn statement(
        &self,
        account_id: &str,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Statement, LedgerError> {
        self.inner.lock().state.statement(account_id, from, to)
    }

    /// Consistent copy of the whole state.
    pub fn snapshot(&self) -> LedgerState {
        self.inner.lock().state.clone()
    }

    /// Flushes and fsyncs the journal, then writes a snapshot.
    pub fn checkpoint(&self) -> Result<(), LedgerError> {
        let mut inner = self.inner.lock();
        let Inner { state, journal } = &mut *inner;
        if let Some(j) = journal.as_mut() {
            j.sync()?;
            j.write_snapshot(state)?;
        }
        Ok(())
    }
}
