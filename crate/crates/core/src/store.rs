//! Persistence: the append-only event log, snapshots and the rejection record.
//!
//! On-disk layout under the data directory:
//!
//! ```text
//! events.log       one StockEvent per line, contiguous seq from 1
//! snapshot.json    latest snapshot (derived; the log is authoritative)
//! rejections.log   rejected op ids with their violation
//! LOCK             held by the single writer process
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EntityId, ValidationCode};
use crate::engine::{Snapshot, StockEvent, Violation, ViolationCode};

pub const EVENTS_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const REJECTIONS_FILE: &str = "rejections.log";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("sequence gap: expected seq {expected}, got {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("snapshot does not match the log: {0}")]
    SnapshotLogMismatch(String),
    #[error("data directory {0} is locked by another process")]
    Locked(PathBuf),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io(_) => "IO_FAILURE",
            StoreError::SequenceGap { .. } => "SEQUENCE_GAP",
            StoreError::CorruptLog { .. } => "CORRUPT_LOG",
            StoreError::SnapshotLogMismatch(_) => "SNAPSHOT_LOG_MISMATCH",
            StoreError::Locked(_) => "DATA_DIR_LOCKED",
        }
    }
}

/// Read access to the committed log; shared with request handlers.
pub trait LogRead: Send + Sync {
    fn last_seq(&self) -> u64;
    /// Up to `limit` events starting at `from_seq` (1-based), in order.
    fn read_from(&self, from_seq: u64, limit: usize) -> Result<Vec<StockEvent>, StoreError>;
}

pub trait EventStore: Send {
    fn reader(&self) -> Arc<dyn LogRead>;

    fn last_seq(&self) -> u64 {
        self.reader().last_seq()
    }

    /// Durably appends `e`, which must carry `last_seq() + 1`.
    fn append_event(&mut self, e: &StockEvent) -> Result<(), StoreError>;

    fn iterate_events(&self, from_seq: u64) -> Result<Vec<StockEvent>, StoreError> {
        self.reader().read_from(from_seq.max(1), usize::MAX)
    }

    fn load_snapshot(&self) -> Result<Option<Snapshot>, StoreError>;
    fn write_snapshot(&mut self, s: &Snapshot) -> Result<(), StoreError>;

    fn append_rejection(&mut self, op_id: EntityId, v: &Violation) -> Result<(), StoreError>;
    fn load_rejections(&self) -> Result<Vec<(EntityId, Violation)>, StoreError>;
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RejectionLine {
    op_id: EntityId,
    violation: ViolationCode,
    #[serde(default)]
    details: Vec<ValidationCode>,
}

fn check_next(last: u64, e: &StockEvent) -> Result<(), StoreError> {
    if e.seq != last + 1 {
        return Err(StoreError::SequenceGap {
            expected: last + 1,
            found: e.seq,
        });
    }
    Ok(())
}

fn page(from_seq: u64, limit: usize, len: u64) -> std::ops::Range<usize> {
    let start = from_seq.max(1) - 1;
    if start >= len {
        return 0..0;
    }
    let end = start.saturating_add(limit as u64).min(len);
    start as usize..end as usize
}

#[derive(Default)]
struct MemoryLog {
    events: RwLock<Vec<StockEvent>>,
}

impl LogRead for MemoryLog {
    fn last_seq(&self) -> u64 {
        self.events.read().unwrap().len() as u64
    }

    fn read_from(&self, from_seq: u64, limit: usize) -> Result<Vec<StockEvent>, StoreError> {
        let events = self.events.read().unwrap();
        Ok(events[page(from_seq, limit, events.len() as u64)].to_vec())
    }
}

/// In-memory store. Clones share the same data, so a test can drop an
/// engine and reopen another one over the same "disk".
#[derive(Clone, Default)]
pub struct MemoryStore {
    log: Arc<MemoryLog>,
    snapshot: Arc<Mutex<Option<String>>>,
    rejections: Arc<Mutex<Vec<(EntityId, Violation)>>>,
    fail_appends: Arc<AtomicBool>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// While set, every append fails with an I/O error and writes nothing.
    pub fn set_fail_appends(&self, fail: bool) {
        self.fail_appends.store(fail, Ordering::SeqCst);
    }

    pub fn snapshot_json(&self) -> Option<String> {
        self.snapshot.lock().unwrap().clone()
    }

    fn injected_failure(&self) -> Result<(), StoreError> {
        if self.fail_appends.load(Ordering::SeqCst) {
            return Err(io::Error::other("injected append failure").into());
        }
        Ok(())
    }
}

impl EventStore for MemoryStore {
    fn reader(&self) -> Arc<dyn LogRead> {
        self.log.clone()
    }

    fn append_event(&mut self, e: &StockEvent) -> Result<(), StoreError> {
        self.injected_failure()?;
        let mut events = self.log.events.write().unwrap();
        check_next(events.len() as u64, e)?;
        events.push(e.clone());
        Ok(())
    }

    fn load_snapshot(&self) -> Result<Option<Snapshot>, StoreError> {
        Ok(self
            .snapshot
            .lock()
            .unwrap()
            .as_deref()
            .and_then(|s| serde_json::from_str(s).ok()))
    }

    fn write_snapshot(&mut self, s: &Snapshot) -> Result<(), StoreError> {
        *self.snapshot.lock().unwrap() = Some(s.to_canonical_json());
        Ok(())
    }

    fn append_rejection(&mut self, op_id: EntityId, v: &Violation) -> Result<(), StoreError> {
        self.injected_failure()?;
        self.rejections.lock().unwrap().push((op_id, v.clone()));
        Ok(())
    }

    fn load_rejections(&self) -> Result<Vec<(EntityId, Violation)>, StoreError> {
        Ok(self.rejections.lock().unwrap().clone())
    }
}

/// Result of scanning a log file from the start.
#[derive(Debug, Default)]
pub struct LogScan {
    /// Byte offset of each event line; `offsets[seq - 1]`.
    pub offsets: Vec<u64>,
    /// Length of the valid prefix.
    pub valid_len: u64,
    /// Bytes after the valid prefix that belong to an incomplete final line.
    pub torn_bytes: u64,
}

/// Walks `path` line by line, handing each valid event to `on_event`.
///
/// A damaged final line is reported as torn rather than as corruption: it is
/// what a crash in the middle of an append leaves behind. Damage anywhere
/// else is `CORRUPT_LOG`.
pub fn scan_log(
    path: &Path,
    mut on_event: impl FnMut(StockEvent) -> Result<(), StoreError>,
) -> Result<LogScan, StoreError> {
    let mut scan = LogScan::default();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(scan),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    let mut expected = 1u64;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let parsed = match line.split_last() {
            Some((b'\n', body)) => serde_json::from_slice::<StockEvent>(body).ok(),
            _ => None,
        };
        match parsed {
            Some(e) if e.seq == expected => {
                scan.offsets.push(scan.valid_len);
                scan.valid_len += n as u64;
                expected += 1;
                on_event(e)?;
            }
            Some(e) => {
                return Err(StoreError::CorruptLog {
                    seq: expected,
                    reason: format!("expected seq {expected}, found {}", e.seq),
                })
            }
            None => {
                if reader.fill_buf()?.is_empty() {
                    scan.torn_bytes = n as u64;
                    break;
                }
                return Err(StoreError::CorruptLog {
                    seq: expected,
                    reason: "unparsable event line".into(),
                });
            }
        }
    }
    Ok(scan)
}

/// Reads every valid event of a log file; a torn tail is ignored.
pub fn read_log_file(path: &Path) -> Result<(Vec<StockEvent>, LogScan), StoreError> {
    let mut events = Vec::new();
    let scan = scan_log(path, |e| {
        events.push(e);
        Ok(())
    })?;
    Ok((events, scan))
}

struct FileLog {
    path: PathBuf,
    // offsets[i] is where seq i+1 starts; the final entry is the end of the log.
    offsets: RwLock<Vec<u64>>,
}

impl LogRead for FileLog {
    fn last_seq(&self) -> u64 {
        self.offsets.read().unwrap().len() as u64 - 1
    }

    fn read_from(&self, from_seq: u64, limit: usize) -> Result<Vec<StockEvent>, StoreError> {
        let (start, end, count) = {
            let offsets = self.offsets.read().unwrap();
            let r = page(from_seq, limit, offsets.len() as u64 - 1);
            if r.is_empty() {
                return Ok(Vec::new());
            }
            (offsets[r.start], offsets[r.end], r.len())
        };
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(start))?;
        let mut buf = vec![0u8; (end - start) as usize];
        file.read_exact(&mut buf)?;
        let mut events = Vec::with_capacity(count);
        for (k, line) in buf.split(|b| *b == b'\n').take(count).enumerate() {
            let seq = from_seq.max(1) + k as u64;
            let e: StockEvent =
                serde_json::from_slice(line).map_err(|err| StoreError::CorruptLog {
                    seq,
                    reason: err.to_string(),
                })?;
            events.push(e);
        }
        Ok(events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// fsync after every append; the default.
    Fsync,
    /// Leave flushing to the OS. Only for tests and bulk tooling.
    Buffered,
}

/// Directory-backed store with one JSON line per event.
pub struct FileStore {
    dir: PathBuf,
    log_file: File,
    log: Arc<FileLog>,
    durability: Durability,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, Durability::Fsync)
    }

    /// Opens the directory for writing. A torn final line left by a crash is
    /// truncated away with a warning.
    pub fn open_with(dir: impl AsRef<Path>, durability: Durability) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let path = dir.join(EVENTS_FILE);
        let scan = scan_log(&path, |_| Ok(()))?;
        let log_file = OpenOptions::new().create(true).append(true).open(&path)?;
        if scan.torn_bytes > 0 {
            log::warn!(
                "ignoring {} bytes of incomplete event after seq {} in {}",
                scan.torn_bytes,
                scan.offsets.len(),
                path.display()
            );
            log_file.set_len(scan.valid_len)?;
            log_file.sync_all()?;
        }
        let mut offsets = scan.offsets;
        offsets.push(scan.valid_len);
        Ok(Self {
            dir,
            log_file,
            log: Arc::new(FileLog {
                path,
                offsets: RwLock::new(offsets),
            }),
            durability,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn sync(&self, f: &File) -> io::Result<()> {
        match self.durability {
            Durability::Fsync => f.sync_data(),
            Durability::Buffered => Ok(()),
        }
    }

    /// Writes the snapshot to a temporary file without publishing it.
    /// Dropping the result without calling [`StagedSnapshot::publish`]
    /// models a crash before the rename.
    pub fn stage_snapshot(&self, s: &Snapshot) -> Result<StagedSnapshot, StoreError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(s.to_canonical_json().as_bytes())?;
        f.sync_all()?;
        Ok(StagedSnapshot {
            tmp,
            target: self.dir.join(SNAPSHOT_FILE),
            dir: self.dir.clone(),
        })
    }
}

pub struct StagedSnapshot {
    tmp: PathBuf,
    target: PathBuf,
    dir: PathBuf,
}

impl StagedSnapshot {
    pub fn publish(self) -> Result<(), StoreError> {
        fs::rename(&self.tmp, &self.target)?;
        File::open(&self.dir)?.sync_all()?;
        Ok(())
    }
}

impl EventStore for FileStore {
    fn reader(&self) -> Arc<dyn LogRead> {
        self.log.clone()
    }

    fn append_event(&mut self, e: &StockEvent) -> Result<(), StoreError> {
        let end = {
            let offsets = self.log.offsets.read().unwrap();
            check_next(offsets.len() as u64 - 1, e)?;
            *offsets.last().unwrap()
        };
        let mut line = serde_json::to_vec(e).map_err(io::Error::from)?;
        line.push(b'\n');
        let written = self
            .log_file
            .write_all(&line)
            .and_then(|_| self.sync(&self.log_file));
        if let Err(err) = written {
            // Do not leave a partial line for the next append to extend.
            if let Err(t) = self.log_file.set_len(end) {
                log::error!("could not roll back partial append at seq {}: {t}", e.seq);
            }
            return Err(err.into());
        }
        self.log
            .offsets
            .write()
            .unwrap()
            .push(end + line.len() as u64);
        Ok(())
    }

    fn load_snapshot(&self) -> Result<Option<Snapshot>, StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        match serde_json::from_slice(&bytes) {
            Ok(s) => Ok(Some(s)),
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}; replaying the full log", path.display());
                Ok(None)
            }
        }
    }

    fn write_snapshot(&mut self, s: &Snapshot) -> Result<(), StoreError> {
        self.stage_snapshot(s)?.publish()
    }

    fn append_rejection(&mut self, op_id: EntityId, v: &Violation) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(&RejectionLine {
            op_id,
            violation: v.code,
            details: v.details.clone(),
        })
        .map_err(io::Error::from)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(REJECTIONS_FILE))?;
        f.write_all(&line)?;
        self.sync(&f)?;
        Ok(())
    }

    fn load_rejections(&self) -> Result<Vec<(EntityId, Violation)>, StoreError> {
        let text = match fs::read_to_string(self.dir.join(REJECTIONS_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<RejectionLine>(l).ok())
            .map(|r| {
                (
                    r.op_id,
                    Violation {
                        code: r.violation,
                        details: r.details,
                    },
                )
            })
            .collect())
    }
}

/// State rebuilt at boot.
pub struct BootState {
    pub snapshot: Snapshot,
    /// Every committed op id with its seq.
    pub op_index: HashMap<EntityId, u64>,
}

/// Rebuilds state: start from the stored snapshot when it agrees with the
/// log, then replay the remaining events.
pub fn load_state(store: &dyn EventStore) -> Result<BootState, StoreError> {
    let reader = store.reader();
    let last = reader.last_seq();
    let mut snapshot = store.load_snapshot()?.unwrap_or_default();
    if snapshot.seq > last {
        return Err(StoreError::SnapshotLogMismatch(format!(
            "snapshot is at seq {} but the log ends at {last}",
            snapshot.seq
        )));
    }
    let base = snapshot.seq;
    let mut op_index = HashMap::new();
    let mut from = 1u64;
    loop {
        let batch = reader.read_from(from, 4096)?;
        if batch.is_empty() {
            break;
        }
        for e in &batch {
            if e.seq != from {
                return Err(StoreError::CorruptLog {
                    seq: from,
                    reason: format!("found seq {}", e.seq),
                });
            }
            if op_index.insert(e.op_id, e.seq).is_some() {
                return Err(StoreError::CorruptLog {
                    seq: e.seq,
                    reason: format!("op id {} appears twice", e.op_id),
                });
            }
            if e.seq > base {
                snapshot.apply(e).map_err(|v| StoreError::CorruptLog {
                    seq: e.seq,
                    reason: v.to_string(),
                })?;
            }
            from += 1;
        }
    }
    for (op, seq) in snapshot.applied_ops() {
        if op_index.get(&op) != Some(&seq) {
            return Err(StoreError::SnapshotLogMismatch(format!(
                "snapshot records op {op} at seq {seq}, the log does not"
            )));
        }
    }
    Ok(BootState { snapshot, op_index })
}

/// Exclusive ownership of a data directory for the life of the value.
pub struct DataDirLock {
    _file: File,
}

impl DataDirLock {
    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(StoreError::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(e.into()),
        }
    }
}
