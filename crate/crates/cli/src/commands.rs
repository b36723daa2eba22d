//! Batch commands: `replay` and `ledger`.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use biopay_core::clock::{Clock, SystemClock};
use biopay_core::ingest::{AuditLog, FixtureBackend, Replay, Trace};
use biopay_core::ledger::{
    format_gbp, replay_counts, Account, JournalEntry, Ledger, LedgerState, PaymentTable, Statement, GUARDIAN,
};
use chrono::{DateTime, Utc};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::pipeline::{payment_table, Pipeline, PipelineStats};
use crate::reports;

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Trace-time speed-up; 0 replays without pauses.
    pub speed: f64,
    /// Checkpoint the ledger every this many events.
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub stats: PipelineStats,
    pub malformed_lines: usize,
    pub payments: PaymentTable,
    pub guardian_balance: u64,
}

impl ReplaySummary {
    pub fn render(&self) -> String {
        let s = &self.stats;
        format!(
            "{} detection events, £{} paid\n\
             events: {}\nblanks: {}\ndetections: {}\ndead letters: {}\nduplicates: {}\nmalformed lines: {}\n\
             guardian balance: £{}\n",
            s.detection_events,
            format_gbp(s.paid_pence),
            s.events,
            s.blanks,
            s.detections,
            s.dead_letters,
            s.duplicates,
            self.malformed_lines,
            format_gbp(self.guardian_balance),
        )
    }
}

/// Runs a trace through detection and payout on one thread. The detector
/// answers from the labels recorded in the trace. `on_checkpoint` sees the
/// ledger after every checkpoint and once at the end.
pub fn cmd_replay(
    config: &RunConfig,
    ledger: Arc<Ledger>,
    trace: impl BufRead,
    options: &ReplayOptions,
    on_checkpoint: &mut dyn FnMut(&Ledger),
) -> Result<ReplaySummary> {
    let trace = Trace::read(trace).context("reading trace")?;
    ledger.ensure_accounts(config.species.roster.iter().map(String::as_str), config.ledger.initial_credit)?;
    for w in &trace.warnings {
        tracing::warn!(line = w.line, "{}", w.message);
    }
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let pipeline = Pipeline::new(
        ledger.clone(),
        Arc::new(FixtureBackend::new()),
        config.detector.detect_config(),
        config.ledger.policy(),
        Arc::new(AuditLog::in_memory()),
        clock,
    );
    for (n, job) in Replay::new(&trace, options.speed).enumerate() {
        pipeline.process(&job);
        if options.checkpoint_every.is_some_and(|k| k > 0 && (n as u64 + 1).is_multiple_of(k)) {
            ledger.checkpoint()?;
            on_checkpoint(&ledger);
        }
    }
    ledger.checkpoint()?;
    on_checkpoint(&ledger);
    Ok(ReplaySummary {
        stats: pipeline.stats(),
        malformed_lines: trace.warnings.len(),
        payments: payment_table(&ledger, &config.species.roster),
        guardian_balance: ledger.balance(GUARDIAN)?,
    })
}

/// Writes `payments.csv` for a finished replay.
pub fn write_payments(dir: &Path, table: &PaymentTable) -> Result<()> {
    reports::write(dir, "payments.csv", &table.to_csv())
}

/// Ledger state for read-only commands: the journal when it exists,
/// otherwise freshly opened accounts.
pub fn read_ledger(config: &RunConfig, journal: Option<&Path>) -> Result<LedgerState> {
    match journal.or(config.ledger.journal.as_deref()) {
        Some(p) if p.exists() => {
            let (state, report) = Ledger::restore(p).with_context(|| format!("reading journal {}", p.display()))?;
            if let Some(at) = report.truncated_at {
                tracing::warn!(offset = at, "ignoring unreadable journal tail");
            }
            Ok(state)
        }
        _ => {
            let mut state = LedgerState::default();
            let at = SystemClock.now();
            for account in config.species.roster.iter().map(String::as_str).chain([GUARDIAN]) {
                state.apply(JournalEntry::Open {
                    account: account.to_string(),
                    initial_credit: config.ledger.initial_credit,
                    at,
                })?;
            }
            Ok(state)
        }
    }
}

fn csv_out(flexible: bool) -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .flexible(flexible)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn balances_csv(accounts: &[Account]) -> String {
    let mut w = csv_out(false);
    w.write_record(["Account", "Balance"]).expect("in-memory csv");
    for a in accounts {
        w.write_record([a.account_id.clone(), format!("£{}", format_gbp(a.balance))]).expect("in-memory csv");
    }
    into_string(w)
}

pub fn statement_csv(s: &Statement) -> String {
    let mut w = csv_out(true);
    let gbp = |p: u64| format!("£{}", format_gbp(p));
    w.write_record(["Account", &s.account_id]).expect("in-memory csv");
    // unbounded ends print as empty cells
    let bound = |t: DateTime<Utc>| {
        if t == DateTime::<Utc>::MIN_UTC || t == DateTime::<Utc>::MAX_UTC { String::new() } else { t.to_rfc3339() }
    };
    w.write_record(["From", &bound(s.from)]).expect("in-memory csv");
    w.write_record(["To", &bound(s.to)]).expect("in-memory csv");
    w.write_record(["Opening", &gbp(s.opening)]).expect("in-memory csv");
    if s.opened_with > 0 {
        w.write_record(["Opened With", &gbp(s.opened_with)]).expect("in-memory csv");
    }
    w.write_record(["Applied At", "Transfer", "Event", "Counterparty", "Credit", "Debit", "Balance"])
        .expect("in-memory csv");
    let mut balance = s.opening + s.opened_with;
    for r in &s.records {
        let (counterparty, credit, debit) = if r.to == s.account_id {
            balance += r.amount;
            (&r.from, gbp(r.amount), String::new())
        } else {
            balance -= r.amount;
            (&r.to, String::new(), gbp(r.amount))
        };
        w.write_record([
            r.applied_at.to_rfc3339(),
            r.transfer_id.to_string(),
            r.event_id.clone().unwrap_or_default(),
            counterparty.clone(),
            credit,
            debit,
            gbp(balance),
        ])
        .expect("in-memory csv");
    }
    w.write_record(["Closing", &gbp(s.closing)]).expect("in-memory csv");
    into_string(w)
}

pub fn cmd_statement(
    state: &LedgerState,
    account: &str,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
) -> Result<String> {
    let from = from.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let to = to.unwrap_or(DateTime::<Utc>::MAX_UTC);
    let s = state.statement(account, from, to)?;
    Ok(statement_csv(&s))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CountsJson {
    Map(BTreeMap<String, u64>),
    Pairs(Vec<(String, u64)>),
}

/// Reads `Species,Detections` CSV (a header row is required; a `Total` row
/// and extra columns are ignored) or JSON, either an object or `[[name, n]]`.
pub fn parse_counts(text: &str) -> Result<Vec<(String, u64)>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        return Ok(match serde_json::from_str(trimmed).context("parsing counts JSON")? {
            CountsJson::Map(m) => m.into_iter().collect(),
            CountsJson::Pairs(p) => p,
        });
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.context("parsing counts CSV")?;
        let (Some(name), Some(n)) = (rec.get(0), rec.get(1)) else {
            bail!("counts line {}: expected Species,Detections", i + 2);
        };
        if name == "Total" {
            continue;
        }
        let n = n.parse().with_context(|| format!("counts line {}: bad count {n:?}", i + 2))?;
        out.push((name.to_string(), n));
    }
    Ok(out)
}

/// Payment table for a species histogram, refusing names outside the roster.
pub fn cmd_replay_counts(config: &RunConfig, counts: &[(String, u64)]) -> Result<PaymentTable> {
    for (name, _) in counts {
        if !config.species.roster.contains(name) {
            bail!("unknown species {name:?}");
        }
    }
    Ok(replay_counts(counts, &config.ledger.policy()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_balances() {
        let state = read_ledger(&RunConfig::default(), None).unwrap();
        let text = balances_csv(&state.accounts_in_open_order());
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 14);
        assert!(lines[1..].iter().all(|l| l.ends_with(",£100.00")));
        assert_eq!(lines[13], "guardian,£100.00");
    }

    #[test]
    fn counts_formats_agree() {
        let csv = "Species,Detections\nPanthera leo,4391\nPapio sp,748\nTotal,5139\n";
        let json = r#"{"Papio sp": 748, "Panthera leo": 4391}"#;
        let pairs = r#"[["Panthera leo", 4391], ["Papio sp", 748]]"#;
        let mut a = parse_counts(csv).unwrap();
        let mut b = parse_counts(json).unwrap();
        let c = parse_counts(pairs).unwrap();
        assert_eq!(a, c);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_species_and_account() {
        let config = RunConfig::default();
        assert!(cmd_replay_counts(&config, &[("Felis catus".into(), 1)]).is_err());
        let state = read_ledger(&config, None).unwrap();
        assert!(cmd_statement(&state, "nobody", None, None).is_err());
        let text = cmd_statement(&state, "Panthera leo", None, None).unwrap();
        assert!(text.ends_with("Closing,£100.00\n"));
    }
}
