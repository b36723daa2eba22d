//! JSON-lines journal with periodic snapshots.
//!
//! Every committed operation is one line. A torn final line (crash during
//! the write) fails to parse and is cut off on the next open, which is what
//! makes multi-transfer events all-or-nothing on disk.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JournalEntry, LedgerError, LedgerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// `fsync` after every commit.
    #[default]
    Fsync,
    /// Leave flushing to the OS. Survives process crashes, not power loss.
    OsBuffered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalOptions {
    pub durability: Durability,
    /// Write a snapshot after this many records; 0 disables.
    pub snapshot_every: u64,
}

impl Default for JournalOptions {
    fn default() -> Self {
        Self { durability: Durability::Fsync, snapshot_every: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RestoreReport {
    /// Records in the restored state.
    pub records: usize,
    /// Byte offset of the first unreadable record, when the tail was dropped.
    pub truncated_at: Option<u64>,
    pub truncation_reason: Option<String>,
    pub from_snapshot: bool,
    /// Length of the valid journal prefix.
    pub valid_len: u64,
}

#[derive(Debug, Deserialize)]
struct Snapshot {
    genesis_hash: String,
    record_count: usize,
    journal_offset: u64,
    state: LedgerState,
}

/// Serializing twin of [`Snapshot`] that borrows the state.
#[derive(Serialize)]
struct SnapshotRef<'a> {
    genesis_hash: &'a str,
    record_count: usize,
    journal_offset: u64,
    state: &'a LedgerState,
}

pub(crate) fn snapshot_path(journal: &Path) -> PathBuf {
    let mut s = journal.as_os_str().to_owned();
    s.push(".snapshot");
    PathBuf::from(s)
}

fn line_hash(line: &[u8]) -> String {
    hex::encode(Sha256::digest(line))
}

fn first_line(bytes: &[u8]) -> Option<&[u8]> {
    if bytes.is_empty() {
        return None;
    }
    Some(bytes.split(|b| *b == b'\n').next().unwrap_or(bytes))
}

fn load_snapshot(path: &Path, journal: &[u8]) -> Option<Snapshot> {
    let raw = fs::read(snapshot_path(path)).ok()?;
    let snap: Snapshot = serde_json::from_slice(&raw).ok()?;
    let offset = usize::try_from(snap.journal_offset).ok()?;
    let genesis = first_line(journal)?;
    let aligned = offset == 0 || (offset <= journal.len() && journal[offset - 1] == b'\n');
    (aligned
        && snap.genesis_hash == line_hash(genesis)
        && snap.state.entries.len() == snap.record_count)
        .then_some(snap)
}

/// Rebuilds state from the journal at `path` (and its snapshot, if valid).
pub(crate) fn restore(path: &Path) -> Result<(LedgerState, RestoreReport), LedgerError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let (mut state, mut pos, from_snapshot) = match load_snapshot(path, &bytes) {
        Some(s) => (s.state, s.journal_offset as usize, true),
        None => (LedgerState::default(), 0, false),
    };

    let mut report = RestoreReport { from_snapshot, ..Default::default() };
    while pos < bytes.len() {
        let (line, next) = match bytes[pos..].iter().position(|b| *b == b'\n') {
            Some(n) => (&bytes[pos..pos + n], pos + n + 1),
            None => (&bytes[pos..], bytes.len()),
        };
        let parsed = serde_json::from_slice::<JournalEntry>(line)
            .map_err(|e| e.to_string())
            .and_then(|entry| state.apply(entry).map_err(|e| e.to_string()));
        if let Err(reason) = parsed {
            tracing::warn!(offset = pos, %reason, "journal tail dropped");
            report.truncated_at = Some(pos as u64);
            report.truncation_reason = Some(reason);
            break;
        }
        pos = next;
    }
    report.valid_len = pos as u64;
    report.records = state.entries.len();
    Ok((state, report))
}

pub(crate) fn write_full(path: &Path, state: &LedgerState) -> Result<(), LedgerError> {
    let mut buf = Vec::new();
    for e in &state.entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    let _ = fs::remove_file(snapshot_path(path));
    Ok(())
}

pub(crate) struct JournalWriter {
    path: PathBuf,
    file: File,
    options: JournalOptions,
    offset: u64,
    genesis_hash: Option<String>,
    since_snapshot: u64,
}

impl JournalWriter {
    pub(crate) fn open(
        path: &Path,
        options: JournalOptions,
    ) -> Result<(LedgerState, JournalWriter, RestoreReport), LedgerError> {
        let (state, report) = restore(path)?;
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        file.set_len(report.valid_len)?;
        let mut offset = report.valid_len;
        let bytes = fs::read(path)?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            file.write_all(b"\n")?;
            offset += 1;
        }
        file.sync_all()?;
        let genesis_hash = first_line(&bytes).map(line_hash);
        let writer = JournalWriter {
            path: path.to_path_buf(),
            file,
            options,
            offset,
            genesis_hash,
            since_snapshot: 0,
        };
        Ok((state, writer, report))
    }

    pub(crate) fn append(&mut self, entry: &JournalEntry) -> Result<(), LedgerError> {
        let mut line = serde_json::to_vec(entry)?;
        if self.genesis_hash.is_none() {
            self.genesis_hash = Some(line_hash(&line));
        }
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.options.durability == Durability::Fsync {
            self.file.sync_data()?;
        }
        self.offset += line.len() as u64;
        self.since_snapshot += 1;
        Ok(())
    }

    pub(crate) fn maybe_snapshot(&mut self, state: &LedgerState) -> Result<(), LedgerError> {
        if self.options.snapshot_every > 0 && self.since_snapshot >= self.options.snapshot_every {
            self.write_snapshot(state)?;
        }
        Ok(())
    }

    pub(crate) fn sync(&mut self) -> Result<(), LedgerError> {
        self.file.sync_all()?;
        Ok(())
    }

    pub(crate) fn write_snapshot(&mut self, state: &LedgerState) -> Result<(), LedgerError> {
        let Some(genesis_hash) = self.genesis_hash.clone() else {
            return Ok(());
        };
        let snap = SnapshotRef {
            genesis_hash: &genesis_hash,
            record_count: state.entries.len(),
            journal_offset: self.offset,
            state,
        };
        let target = snapshot_path(&self.path);
        let tmp = target.with_extension("snapshot.tmp");
        {
            let mut f = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut f, &snap)?;
            f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(tmp, target)?;
        self.since_snapshot = 0;
        Ok(())
    }
}
