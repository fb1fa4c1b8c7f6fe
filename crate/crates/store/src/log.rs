//! Append-only vote store with immutable snapshots.
//!
//! Events are kept in memory and mirrored to a [`LogSink`], by default a
//! JSON Lines file. An append writes one complete line and syncs it before
//! the event becomes visible or its sequence number is returned; a failed
//! write is rolled back. On open, a final line without its newline is a torn
//! write that was never acknowledged and is cut off. Any other unreadable
//! line is corruption.
//!
//! Appends are serialized by one lock. Readers take [`Snapshot`]s, which
//! share the event vector and are never changed by later appends.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use pollcast_core::{latest_votes, LatestVotes, PartyRegistry, VoteRecord};
use thiserror::Error;

use crate::wire::{parse_line, record_to_line, LineError, LogLine};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt vote store at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("rejected vote: {0}")]
    Invalid(String),
}

impl StoreError {
    /// Storage failures may succeed on retry; rejected input never will.
    pub fn is_retryable(&self) -> bool {
        matches!(self, StoreError::Io(_))
    }
}

/// Durable destination for encoded events.
pub trait LogSink: Send {
    /// Writes one complete line, newline included, and makes it durable.
    /// On error nothing of the line may remain.
    fn append_line(&mut self, line: &[u8]) -> io::Result<()>;

    fn sync(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards everything; for purely in-memory stores.
pub struct NullSink;

impl LogSink for NullSink {
    fn append_line(&mut self, _line: &[u8]) -> io::Result<()> {
        Ok(())
    }
}

pub struct FileSink {
    file: File,
    len: u64,
}

impl LogSink for FileSink {
    fn append_line(&mut self, line: &[u8]) -> io::Result<()> {
        let result = self.file.write_all(line).and_then(|_| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(e) => {
                // drop whatever part of the line reached the file
                let _ = self.file.set_len(self.len);
                let _ = self.file.seek(SeekFrom::End(0));
                Err(e)
            }
        }
    }

    fn sync(&mut self) -> io::Result<()> {
        self.file.sync_all()
    }
}

/// Immutable view of the first events of a store, up to `high_water`.
#[derive(Clone, Debug)]
pub struct Snapshot {
    events: Arc<Vec<VoteRecord>>,
    high_water: u64,
}

impl Snapshot {
    pub fn from_events(events: Vec<VoteRecord>) -> Self {
        let high_water = events.last().map_or(0, |e| e.seq);
        Snapshot {
            events: Arc::new(events),
            high_water,
        }
    }

    pub fn events(&self) -> &[VoteRecord] {
        &self.events
    }

    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn latest(&self) -> LatestVotes {
        latest_votes(self.events.iter())
    }

    /// Events of one device in sequence order.
    pub fn history(&self, device: &str) -> Vec<VoteRecord> {
        self.events
            .iter()
            .filter(|e| e.device_id.as_str() == device)
            .cloned()
            .collect()
    }
}

struct Writer {
    sink: Box<dyn LogSink>,
    last_seq: u64,
    last_ts: Option<DateTime<Utc>>,
}

pub struct VoteStore {
    registry: Arc<PartyRegistry>,
    path: Option<PathBuf>,
    writer: Mutex<Writer>,
    events: RwLock<Arc<Vec<VoteRecord>>>,
}

impl VoteStore {
    pub fn in_memory(registry: Arc<PartyRegistry>) -> Self {
        Self::with_sink(registry, Box::new(NullSink), Vec::new())
    }

    /// A store whose existing `events` are already persisted in `sink`.
    pub fn with_sink(registry: Arc<PartyRegistry>, sink: Box<dyn LogSink>, events: Vec<VoteRecord>) -> Self {
        let writer = Writer {
            sink,
            last_seq: events.last().map_or(0, |e| e.seq),
            last_ts: events.iter().map(|e| e.timestamp).max(),
        };
        VoteStore {
            registry,
            path: None,
            writer: Mutex::new(writer),
            events: RwLock::new(Arc::new(events)),
        }
    }

    /// Opens (or creates) a store file, validating every line against
    /// `registry`. A torn final line is truncated away.
    pub fn open(path: impl AsRef<Path>, registry: Arc<PartyRegistry>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (events, valid_len) = decode(&bytes, &registry)?;
        if valid_len < bytes.len() as u64 {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() as u64 - valid_len,
                "truncating torn final record"
            );
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        let sink = FileSink { file, len: valid_len };
        let mut store = Self::with_sink(registry, Box::new(sink), events);
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    /// Reads a store file without modifying it. A torn tail is ignored.
    pub fn read_snapshot(path: impl AsRef<Path>, registry: &PartyRegistry) -> Result<Snapshot, StoreError> {
        let bytes = std::fs::read(path)?;
        let (events, _) = decode(&bytes, registry)?;
        Ok(Snapshot::from_events(events))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn registry(&self) -> &PartyRegistry {
        &self.registry
    }

    /// Appends with the record's own timestamp. Returns the assigned sequence number.
    pub fn append(&self, record: VoteRecord) -> Result<u64, StoreError> {
        self.append_inner(record, None).map(|r| r.seq)
    }

    /// Appends stamped with `now`, or with the latest stored timestamp if the
    /// clock is behind it, so the new event is the most recent one stored.
    pub fn append_stamped(&self, record: VoteRecord, now: DateTime<Utc>) -> Result<VoteRecord, StoreError> {
        self.append_inner(record, Some(now))
    }

    fn append_inner(&self, mut record: VoteRecord, now: Option<DateTime<Utc>>) -> Result<VoteRecord, StoreError> {
        self.validate(&record)?;
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        if let Some(now) = now {
            record.timestamp = writer.last_ts.map_or(now, |last| last.max(now));
        }
        record.seq = writer.last_seq + 1;
        let mut line = record_to_line(&record, &self.registry.abstention_code).into_bytes();
        line.push(b'\n');
        writer.sink.append_line(&line)?;
        writer.last_seq = record.seq;
        writer.last_ts = Some(writer.last_ts.map_or(record.timestamp, |t| t.max(record.timestamp)));

        let mut events = self.events.write().expect("events lock poisoned");
        Arc::make_mut(&mut events).push(record.clone());
        Ok(record)
    }

    fn validate(&self, record: &VoteRecord) -> Result<(), StoreError> {
        // same checks as ingest: round-trip the record through the wire format
        LogLine::from_record(record, &self.registry.abstention_code)
            .into_record(&self.registry, record.seq)
            .map(|_| ())
            .map_err(|kind| StoreError::Invalid(kind.to_string()))
    }

    pub fn snapshot(&self) -> Snapshot {
        let events = self.events.read().expect("events lock poisoned").clone();
        let high_water = events.last().map_or(0, |e| e.seq);
        Snapshot { events, high_water }
    }

    pub fn high_water(&self) -> u64 {
        self.writer.lock().expect("writer lock poisoned").last_seq
    }

    /// Flushes the sink; called on shutdown.
    pub fn sync(&self) -> Result<(), StoreError> {
        self.writer.lock().expect("writer lock poisoned").sink.sync()?;
        Ok(())
    }
}

/// Decodes complete lines; returns the events and the byte length they span.
fn decode(bytes: &[u8], registry: &PartyRegistry) -> Result<(Vec<VoteRecord>, u64), StoreError> {
    let mut events: Vec<VoteRecord> = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let Some(end) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            break;
        };
        let raw = &bytes[offset..offset + end];
        let corrupt = |reason: String| StoreError::Corrupt {
            offset: offset as u64,
            reason,
        };
        let text = std::str::from_utf8(raw).map_err(|e| corrupt(e.to_string()))?;
        let record = parse_line(text, registry, 0).map_err(|e: LineError| corrupt(e.kind.to_string()))?;
        if record.seq == 0 || events.last().is_some_and(|prev| record.seq <= prev.seq) {
            return Err(corrupt(format!("sequence number {} out of order", record.seq)));
        }
        events.push(record);
        offset += end + 1;
    }
    Ok((events, offset as u64))
}
