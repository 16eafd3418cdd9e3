//! JSON-lines event log with periodic state snapshots.
//!
//! The log is the source of truth. A snapshot stores the state as of some
//! seq so startup only replays the tail; deleting it changes nothing but
//! startup time.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pilar_core::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{ApplyError, Event, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("event log i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log line {line} (expected seq {seq}): {reason}")]
    CorruptLogLine { seq: u64, line: usize, reason: String },
    #[error("event {seq} cannot be applied: {source}")]
    Apply { seq: u64, source: ApplyError },
    #[error("cannot encode event: {0}")]
    Encode(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    state: State,
}

pub fn snapshot_path(log: &Path) -> PathBuf {
    let mut name = log.file_name().unwrap_or_default().to_os_string();
    name.push(".snapshot");
    log.with_file_name(name)
}

/// Parsed log contents. `valid_len` is the byte length of the well-formed
/// prefix; anything after it is a truncated final line.
#[derive(Debug)]
pub struct ParsedLog {
    pub records: Vec<EventRecord>,
    pub valid_len: u64,
    pub warnings: Vec<String>,
}

pub fn parse_log(raw: &str) -> Result<ParsedLog, PersistError> {
    let mut records: Vec<EventRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0usize;
    let mut valid_len = 0usize;
    let pieces: Vec<&str> = raw.split_inclusive('\n').collect();
    for (i, piece) in pieces.iter().enumerate() {
        offset += piece.len();
        let expected = records.last().map_or(1, |r| r.seq + 1);
        let line = piece.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            valid_len = offset;
            continue;
        }
        let is_tail = i + 1 == pieces.len() && !piece.ends_with('\n');
        match serde_json::from_str::<EventRecord>(line) {
            Ok(rec) if rec.seq < expected => {
                return Err(PersistError::CorruptLogLine {
                    seq: expected,
                    line: i + 1,
                    reason: format!("seq {} is not increasing", rec.seq),
                })
            }
            Ok(rec) => {
                records.push(rec);
                valid_len = offset;
            }
            Err(e) if is_tail => {
                let w = format!("ignoring truncated final log line {} (seq {expected}): {e}", i + 1);
                tracing::warn!("{w}");
                warnings.push(w);
            }
            Err(e) => return Err(PersistError::CorruptLogLine { seq: expected, line: i + 1, reason: e.to_string() }),
        }
    }
    Ok(ParsedLog { records, valid_len: valid_len as u64, warnings })
}

/// Applies `records` on top of `state`. On error `state` is left as it was.
pub fn apply_records(state: &mut State, records: &[EventRecord], engine: &Engine) -> Result<(), PersistError> {
    let mut next = state.clone();
    for rec in records {
        next.apply(rec.seq, &rec.event, engine).map_err(|source| PersistError::Apply { seq: rec.seq, source })?;
    }
    *state = next;
    Ok(())
}

/// Rebuilds state from the log at `path` (and its snapshot, if usable)
/// without modifying any file.
pub fn replay(path: &Path, engine: &Engine) -> Result<(State, ParsedLog), PersistError> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut parsed = parse_log(&raw)?;
    let last_seq = parsed.records.last().map_or(0, |r| r.seq);
    let mut state = match load_snapshot(path) {
        Some(s) if s.last_seq <= last_seq => s,
        Some(s) => {
            let w = format!("snapshot at seq {} is ahead of the log (seq {last_seq}); ignoring it", s.last_seq);
            tracing::warn!("{w}");
            parsed.warnings.push(w);
            State::default()
        }
        None => State::default(),
    };
    apply_records(&mut state, &parsed.records, engine)?;
    Ok((state, parsed))
}

fn load_snapshot(log: &Path) -> Option<State> {
    let path = snapshot_path(log);
    let raw = std::fs::read_to_string(&path).ok()?;
    match serde_json::from_str::<Snapshot>(&raw) {
        Ok(s) => Some(s.state),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "unreadable snapshot; replaying the full log");
            None
        }
    }
}

/// Append handle. Without a path the log only numbers events.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    next_seq: u64,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { path: None, file: None, next_seq: 1, snapshot_every: 0, since_snapshot: 0 }
    }

    /// Replays `path`, drops a truncated tail from the file and opens it for
    /// appending.
    pub fn open(path: &Path, snapshot_every: u64, engine: &Engine) -> Result<(Self, State, Vec<String>), PersistError> {
        let (state, parsed) = replay(path, engine)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(path))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() > parsed.valid_len {
            file.set_len(parsed.valid_len).map_err(io_err(path))?;
        }
        let next_seq = parsed.records.last().map_or(state.last_seq, |r| r.seq.max(state.last_seq)) + 1;
        Ok((
            Self { path: Some(path.to_path_buf()), file: Some(file), next_seq, snapshot_every, since_snapshot: 0 },
            state,
            parsed.warnings,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, event: Event) -> Result<EventRecord, PersistError> {
        let record = EventRecord {
            seq: self.next_seq,
            timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            event,
        };
        if let (Some(file), Some(path)) = (self.file.as_mut(), self.path.as_deref()) {
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            file.write_all(&line).map_err(io_err(path))?;
            file.flush().map_err(io_err(path))?;
        }
        self.next_seq += 1;
        self.since_snapshot += 1;
        Ok(record)
    }

    /// Writes a snapshot if enough events have accumulated since the last.
    pub fn maybe_snapshot(&mut self, state: &State) -> Result<bool, PersistError> {
        if self.snapshot_every == 0 || self.since_snapshot < self.snapshot_every {
            return Ok(false);
        }
        self.snapshot(state)?;
        Ok(true)
    }

    pub fn snapshot(&mut self, state: &State) -> Result<(), PersistError> {
        let Some(path) = self.path.as_deref() else {
            return Ok(());
        };
        let target = snapshot_path(path);
        let tmp = target.with_extension("tmp");
        let body = serde_json::to_vec(&Snapshot { state: state.clone() })?;
        std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &target).map_err(io_err(&target))?;
        self.since_snapshot = 0;
        tracing::debug!(seq = state.last_seq, path = %target.display(), "snapshot written");
        Ok(())
    }
}

/// State plus its log; every change goes through [`Store::commit`].
#[derive(Debug)]
pub struct Store {
    pub state: State,
    pub log: EventLog,
}

#[derive(Debug, Error)]
pub enum CommitError {
    #[error(transparent)]
    Rejected(#[from] ApplyError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

impl Store {
    pub fn in_memory() -> Self {
        Self { state: State::default(), log: EventLog::in_memory() }
    }

    /// Validates, logs and applies `event`. Nothing is logged if the event is
    /// rejected.
    pub fn commit(&mut self, event: Event, engine: &Engine) -> Result<u64, CommitError> {
        self.state.check(&event)?;
        let record = self.log.append(event)?;
        self.state
            .apply(record.seq, &record.event, engine)
            .map_err(|source| PersistError::Apply { seq: record.seq, source })?;
        if let Err(e) = self.log.maybe_snapshot(&self.state) {
            tracing::warn!(error = %e, "snapshot failed; the log is still complete");
        }
        Ok(record.seq)
    }
}
