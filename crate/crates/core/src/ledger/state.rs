use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{LedgerError, GUARDIAN};
use crate::ingest::DetectionEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: String,
    /// Pence.
    pub balance: u64,
    pub initial_credit: u64,
    pub opened_at: DateTime<Utc>,
    /// Position in opening order.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub transfer_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub applied_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One payment per detected animal.
    #[default]
    PerInstance,
    /// One payment per species present in the image.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsufficientFunds {
    /// Skip every payment of that species in the event and record it.
    #[default]
    Skip,
    /// Pay out whatever the account still holds.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutPolicy {
    /// Pence per payable detection.
    pub unit_amount: u64,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub insufficient_funds: InsufficientFunds,
}

impl Default for PayoutPolicy {
    fn default() -> Self {
        Self::penny()
    }
}

impl PayoutPolicy {
    /// £0.01 per detected animal.
    pub fn penny() -> Self {
        Self {
            unit_amount: 1,
            granularity: Granularity::PerInstance,
            insufficient_funds: InsufficientFunds::Skip,
        }
    }

    /// £0.10 per detected animal.
    pub fn ten_pence() -> Self {
        Self { unit_amount: 10, ..Self::penny() }
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPayout {
    pub species: String,
    pub requested: u64,
    pub available: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Open {
        account: String,
        initial_credit: u64,
        at: DateTime<Utc>,
    },
    Transfer {
        record: TransferRecord,
    },
    /// All payouts of one detection event; applied as a unit.
    Event {
        event_id: String,
        transfers: Vec<TransferRecord>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        skipped: Vec<SkippedPayout>,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventOutcome {
    pub transfers: Vec<TransferRecord>,
    pub skipped: Vec<SkippedPayout>,
    /// The event id had already been applied; nothing moved.
    pub duplicate: bool,
}

impl EventOutcome {
    pub fn paid(&self) -> u64 {
        self.transfers.iter().map(|t| t.amount).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub account_id: String,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub opening: u64,
    /// Initial credit if the account was opened inside the range.
    pub opened_with: u64,
    pub records: Vec<TransferRecord>,
    pub closing: u64,
}

impl Statement {
    pub fn credits(&self) -> u64 {
        self.records.iter().filter(|r| r.to == self.account_id).map(|r| r.amount).sum()
    }

    pub fn debits(&self) -> u64 {
        self.records.iter().filter(|r| r.from == self.account_id).map(|r| r.amount).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerState {
    pub accounts: BTreeMap<String, Account>,
    pub entries: Vec<JournalEntry>,
    pub applied_event_ids: BTreeSet<String>,
    pub next_transfer_id: u64,
}

impl LedgerState {
    fn check_transfer(
        &self,
        balances: &HashMap<&str, u64>,
        from: &str,
        to: &str,
        amount: u64,
    ) -> Result<(), LedgerError> {
        if amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        if from == to {
            return Err(LedgerError::SameAccount(from.to_string()));
        }
        for id in [from, to] {
            if !self.accounts.contains_key(id) {
                return Err(LedgerError::UnknownAccount(id.to_string()));
            }
        }
        let balance = balances.get(from).copied().unwrap_or(self.accounts[from].balance);
        if balance < amount {
            return Err(LedgerError::InsufficientFunds {
                account: from.to_string(),
                balance,
                requested: amount,
            });
        }
        Ok(())
    }

    /// Validates and applies one journal entry. On error nothing changes.
    pub fn apply(&mut self, entry: JournalEntry) -> Result<(), LedgerError> {
        match &entry {
            JournalEntry::Open { account, initial_credit, at } => {
                if self.accounts.contains_key(account) {
                    return Err(LedgerError::DuplicateAccount(account.clone()));
                }
                let seq = self.accounts.len() as u64;
                self.accounts.insert(
                    account.clone(),
                    Account {
                        account_id: account.clone(),
                        balance: *initial_credit,
                        initial_credit: *initial_credit,
                        opened_at: *at,
                        seq,
                    },
                );
            }
            JournalEntry::Transfer { record } => {
                self.apply_transfers(std::slice::from_ref(record))?;
            }
            JournalEntry::Event { event_id, transfers, .. } => {
                if event_id.is_empty() {
                    return Err(LedgerError::EmptyEventId);
                }
                if self.applied_event_ids.contains(event_id) {
                    return Err(LedgerError::DuplicateEvent(event_id.clone()));
                }
                self.apply_transfers(transfers)?;
                self.applied_event_ids.insert(event_id.clone());
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    fn apply_transfers(&mut self, records: &[TransferRecord]) -> Result<(), LedgerError> {
        let mut balances: HashMap<&str, u64> = HashMap::new();
        for (k, r) in records.iter().enumerate() {
            if r.transfer_id != self.next_transfer_id + k as u64 {
                return Err(LedgerError::Corrupt {
                    offset: 0,
                    reason: format!(
                        "transfer id {} out of sequence (expected {})",
                        r.transfer_id,
                        self.next_transfer_id + k as u64
                    ),
                });
            }
            self.check_transfer(&balances, &r.from, &r.to, r.amount)?;
            let from = balances.get(r.from.as_str()).copied().unwrap_or(self.accounts[&r.from].balance);
            let to = balances.get(r.to.as_str()).copied().unwrap_or(self.accounts[&r.to].balance);
            balances.insert(&r.from, from - r.amount);
            balances.insert(&r.to, to + r.amount);
        }
        let updates: Vec<(String, u64)> =
            balances.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (id, b) in updates {
            self.accounts.get_mut(&id).expect("checked").balance = b;
        }
        self.next_transfer_id += records.len() as u64;
        Ok(())
    }

    pub(crate) fn plan_transfer(
        &self,
        from: &str,
        to: &str,
        amount: u64,
        event_id: Option<&str>,
        at: DateTime<Utc>,
    ) -> Result<TransferRecord, LedgerError> {
        self.check_transfer(&HashMap::new(), from, to, amount)?;
        Ok(TransferRecord {
            transfer_id: self.next_transfer_id,
            event_id: event_id.map(str::to_string),
            from: from.to_string(),
            to: to.to_string(),
            amount,
            applied_at: at,
        })
    }

    /// Builds the journal entry paying out `event`. Does not mutate.
    pub(crate) fn plan_event(
        &self,
        event: &DetectionEvent,
        policy: &PayoutPolicy,
        at: DateTime<Utc>,
    ) -> Result<JournalEntry, LedgerError> {
        if event.event_id.is_empty() {
            return Err(LedgerError::EmptyEventId);
        }
        if policy.unit_amount == 0 {
            return Err(LedgerError::ZeroAmount);
        }
        if !self.accounts.contains_key(GUARDIAN) {
            return Err(LedgerError::UnknownAccount(GUARDIAN.to_string()));
        }
        let mut unknown: Vec<String> = event
            .detections
            .iter()
            .map(|d| d.species.clone())
            .filter(|s| s == GUARDIAN || !self.accounts.contains_key(s))
            .collect();
        if !unknown.is_empty() {
            unknown.sort();
            unknown.dedup();
            return Err(LedgerError::UnknownSpecies { event_id: event.event_id.clone(), species: unknown });
        }

        // payable units per species, in order of first appearance
        let mut units: Vec<(&str, u64)> = Vec::new();
        for d in &event.detections {
            match units.iter_mut().find(|(s, _)| *s == d.species) {
                Some((_, n)) => {
                    if policy.granularity == Granularity::PerInstance {
                        *n += 1;
                    }
                }
                None => units.push((&d.species, 1)),
            }
        }

        let mut transfers = Vec::new();
        let mut skipped = Vec::new();
        let mut next_id = self.next_transfer_id;
        let mut push = |species: &str, amount: u64, transfers: &mut Vec<TransferRecord>| {
            transfers.push(TransferRecord {
                transfer_id: next_id,
                event_id: Some(event.event_id.clone()),
                from: species.to_string(),
                to: GUARDIAN.to_string(),
                amount,
                applied_at: at,
            });
            next_id += 1;
        };
        for (species, n) in units {
            let available = self.accounts[species].balance;
            let requested = n * policy.unit_amount;
            if available >= requested {
                for _ in 0..n {
                    push(species, policy.unit_amount, &mut transfers);
                }
                continue;
            }
            skipped.push(SkippedPayout { species: species.to_string(), requested, available });
            if policy.insufficient_funds == InsufficientFunds::Partial {
                let whole = available / policy.unit_amount;
                for _ in 0..whole {
                    push(species, policy.unit_amount, &mut transfers);
                }
                let rest = available % policy.unit_amount;
                if rest > 0 {
                    push(species, rest, &mut transfers);
                }
            }
        }
        Ok(JournalEntry::Event { event_id: event.event_id.clone(), transfers, skipped, at })
    }

    pub fn transfers(&self) -> impl Iterator<Item = &TransferRecord> {
        self.entries.iter().flat_map(|e| match e {
            JournalEntry::Transfer { record } => std::slice::from_ref(record).iter(),
            JournalEntry::Event { transfers, .. } => transfers.iter(),
            JournalEntry::Open { .. } => [].iter(),
        })
    }

    pub fn accounts_in_open_order(&self) -> Vec<Account> {
        let mut v: Vec<Account> = self.accounts.values().cloned().collect();
        v.sort_by_key(|a| a.seq);
        v
    }

    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| a.balance as u128).sum()
    }

    pub fn total_initial_credit(&self) -> u128 {
        self.accounts.values().map(|a| a.initial_credit as u128).sum()
    }

    pub fn skipped(&self) -> impl Iterator<Item = (&str, &SkippedPayout)> {
        self.entries.iter().flat_map(|e| match e {
            JournalEntry::Event { event_id, skipped, .. } => {
                skipped.iter().map(move |s| (event_id.as_str(), s)).collect::<Vec<_>>()
            }
            _ => Vec::new(),
        })
    }

    /// Activity of one account over `[from, to)`.
    pub fn statement(
        &self,
        account_id: &str,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Statement, LedgerError> {
        if to < from {
            return Err(LedgerError::InvertedRange);
        }
        let account = self
            .accounts
            .get(account_id)
            .ok_or_else(|| LedgerError::UnknownAccount(account_id.to_string()))?;
        let mut opening: u64 = 0;
        let mut opened_with = 0;
        if account.opened_at < from {
            opening = account.initial_credit;
        } else if account.opened_at < to {
            opened_with = account.initial_credit;
        }
        let mut records = Vec::new();
        for r in self.transfers() {
            if r.from != account_id && r.to != account_id {
                continue;
            }
            if r.applied_at < from {
                if r.to == account_id {
                    opening += r.amount;
                } else {
                    opening -= r.amount;
                }
            } else if r.applied_at < to {
                records.push(r.clone());
            }
        }
        let mut closing = opening + opened_with;
        for r in &records {
            if r.to == account_id {
                closing += r.amount;
            } else {
                closing -= r.amount;
            }
        }
        Ok(Statement {
            account_id: account_id.to_string(),
            from,
            to,
            opening,
            opened_with,
            records,
            closing,
        })
    }
}
