//! Append-only JSON Lines event log with periodic snapshots.
//!
//! Every state change of a study is one line: a session creation or a
//! session event, numbered by a study-wide sequence. A crash can leave a
//! partially written last line; readers drop it and writers truncate it
//! before appending again. Anything malformed before the last line is
//! corruption and fails loudly.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use drt_core::session::{ParticipantProfile, Session, SessionEvent};
use drt_core::Timestamp;
use serde::{Deserialize, Serialize};

use crate::error::{write_atomic, HarnessError, Result};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub seq: u64,
    pub session_id: String,
    /// Server time at which the record was written.
    pub wall_time: Timestamp,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    SessionOpened(SessionOpened),
    Event { event: SessionEvent },
}

/// Creation parameters of a session; the rest comes from the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOpened {
    pub participant: ParticipantProfile,
    pub block_id: u32,
    pub order_seed: u64,
    pub created_at: Timestamp,
}

/// Destination of encoded log lines.
pub trait LogSink: Send {
    /// Writes one complete line (the newline included) durably.
    fn append(&mut self, line: &[u8]) -> io::Result<()>;
}

/// Appends to a file and syncs after every line.
#[derive(Debug)]
pub struct FileSink {
    file: File,
}

impl FileSink {
    pub fn open(path: &Path) -> io::Result<FileSink> {
        Ok(FileSink { file: OpenOptions::new().create(true).append(true).open(path)? })
    }
}

impl LogSink for FileSink {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        self.file.write_all(line)?;
        self.file.sync_data()
    }
}

/// Simulates a crash: after `remaining` successful appends, the next append
/// writes only a prefix of its line and fails, as does every later one.
/// The counter is shared so a test can arm several sinks at once.
#[derive(Debug)]
pub struct FaultySink<S> {
    inner: S,
    remaining: Arc<AtomicUsize>,
    crashed: bool,
}

impl<S: LogSink> FaultySink<S> {
    pub fn new(inner: S, remaining: Arc<AtomicUsize>) -> Self {
        FaultySink { inner, remaining, crashed: false }
    }
}

impl<S: LogSink> LogSink for FaultySink<S> {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        let crash = || io::Error::other("injected crash");
        if self.crashed {
            return Err(crash());
        }
        let left = self.remaining.load(Ordering::SeqCst);
        if left == 0 {
            self.crashed = true;
            self.inner.append(&line[..line.len() / 2])?;
            return Err(crash());
        }
        self.remaining.store(left - 1, Ordering::SeqCst);
        self.inner.append(line)
    }
}

/// Opens the sink for a log file.
pub type SinkFactory = Arc<dyn Fn(&Path) -> io::Result<Box<dyn LogSink>> + Send + Sync>;

pub fn file_sinks() -> SinkFactory {
    Arc::new(|p: &Path| Ok(Box::new(FileSink::open(p)?) as Box<dyn LogSink>))
}

/// Sinks that crash after `appends` successful appends in total.
pub fn faulty_sinks(appends: usize) -> SinkFactory {
    let remaining = Arc::new(AtomicUsize::new(appends));
    Arc::new(move |p: &Path| Ok(Box::new(FaultySink::new(FileSink::open(p)?, remaining.clone())) as Box<dyn LogSink>))
}

/// Parsed log content.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogContents {
    pub records: Vec<EventLogRecord>,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
    /// Whether a partial last line was dropped.
    pub torn_tail: bool,
}

/// Parses log text. A final line that lacks its newline or does not parse
/// is treated as torn; any other bad line is an error.
pub fn parse_log(text: &str) -> Result<LogContents> {
    let mut out = LogContents::default();
    let mut offset = 0usize;
    let mut last_seq = None;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        let complete = raw.ends_with('\n');
        let body = raw.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() && complete {
            offset += raw.len();
            continue;
        }
        match serde_json::from_str::<EventLogRecord>(body) {
            Ok(rec) if complete => {
                if last_seq.is_some_and(|s| rec.seq <= s) {
                    return Err(HarnessError::at_line(i + 1, format!("sequence {} does not increase", rec.seq)));
                }
                last_seq = Some(rec.seq);
                out.records.push(rec);
                offset += raw.len();
            }
            _ if is_last => {
                out.torn_tail = true;
                break;
            }
            Ok(_) => return Err(HarnessError::at_line(i + 1, "incomplete line")),
            Err(e) => return Err(HarnessError::at_line(i + 1, e)),
        }
    }
    out.valid_len = offset as u64;
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<LogContents> {
    match std::fs::read(path) {
        Ok(bytes) => {
            let text = String::from_utf8_lossy(&bytes);
            parse_log(&text).map_err(|e| e.in_file(path))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LogContents::default()),
        Err(e) => Err(HarnessError::io(path, e)),
    }
}

/// Writer side of a study's log.
pub struct EventLog {
    path: PathBuf,
    sink: Box<dyn LogSink>,
    next_seq: u64,
    /// Set after a failed append; the file may end in a partial line.
    poisoned: bool,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("path", &self.path).field("next_seq", &self.next_seq).finish()
    }
}

impl EventLog {
    /// Opens `path` for appending after `contents` were read from it,
    /// cutting off a torn tail first.
    pub fn resume(path: &Path, contents: &LogContents, sinks: &SinkFactory) -> Result<EventLog> {
        if contents.torn_tail {
            let f = OpenOptions::new().write(true).open(path).map_err(|e| HarnessError::io(path, e))?;
            f.set_len(contents.valid_len).map_err(|e| HarnessError::io(path, e))?;
            f.sync_all().map_err(|e| HarnessError::io(path, e))?;
        }
        let sink = sinks(path).map_err(|e| HarnessError::io(path, e))?;
        let next_seq = contents.records.last().map_or(1, |r| r.seq + 1);
        Ok(EventLog { path: path.to_path_buf(), sink, next_seq, poisoned: false })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sequence number the next record will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Continues numbering after `seq` if that is further than the log.
    pub fn skip_to(&mut self, seq: u64) {
        self.next_seq = self.next_seq.max(seq + 1);
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Appends one record. On failure nothing is committed: the sequence
    /// does not advance, and the log refuses further appends until it is
    /// reopened through recovery.
    pub fn append(&mut self, session_id: &str, wall_time: Timestamp, payload: Payload) -> Result<EventLogRecord> {
        if self.poisoned {
            return Err(HarnessError::io(&self.path, io::Error::other("log is unusable after a failed append")));
        }
        let rec = EventLogRecord { seq: self.next_seq, session_id: session_id.to_string(), wall_time, payload };
        let mut line = serde_json::to_vec(&rec).map_err(HarnessError::invalid)?;
        line.push(b'\n');
        if let Err(e) = self.sink.append(&line) {
            self.poisoned = true;
            return Err(HarnessError::io(&self.path, e));
        }
        self.next_seq += 1;
        Ok(rec)
    }
}

/// State of every session of a study after applying records up to `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub seq: u64,
    pub sessions: Vec<Session>,
}

pub fn write_snapshot(dir: &Path, snapshot: &Snapshot) -> Result<()> {
    let json = serde_json::to_vec(snapshot).map_err(HarnessError::invalid)?;
    write_atomic(&dir.join(SNAPSHOT_FILE), &json)
}

pub fn read_snapshot(dir: &Path) -> Result<Option<Snapshot>> {
    let path = dir.join(SNAPSHOT_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => {
            let snap: Snapshot =
                serde_json::from_slice(&bytes).map_err(|e| HarnessError::at_line(e.line(), e).in_file(&path))?;
            if snap.version != SNAPSHOT_VERSION {
                return Err(HarnessError::invalid(format!("unsupported snapshot version {}", snap.version)).in_file(&path));
            }
            Ok(Some(snap))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(HarnessError::io(&path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opened(seq: u64) -> EventLogRecord {
        EventLogRecord {
            seq,
            session_id: format!("s{seq}"),
            wall_time: Timestamp(seq * 1000),
            payload: Payload::Event { event: SessionEvent::ConsentGiven { at: Timestamp(seq * 1000) } },
        }
    }

    fn line(rec: &EventLogRecord) -> String {
        serde_json::to_string(rec).unwrap() + "\n"
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let whole = line(&opened(1)) + &line(&opened(2));
        let torn = &line(&opened(3))[..20];
        std::fs::write(&path, format!("{whole}{torn}")).unwrap();
        let contents = read_log(&path).unwrap();
        assert!(contents.torn_tail);
        assert_eq!(contents.records.len(), 2);
        assert_eq!(contents.valid_len as usize, whole.len());

        let mut log = EventLog::resume(&path, &contents, &file_sinks()).unwrap();
        assert_eq!(log.next_seq(), 3);
        log.append("s3", Timestamp(3000), opened(3).payload).unwrap();
        let again = read_log(&path).unwrap();
        assert!(!again.torn_tail);
        assert_eq!(again.records.iter().map(|r| r.seq).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let text = line(&opened(1)) + "{garbage\n" + &line(&opened(3));
        let err = parse_log(&text).unwrap_err();
        assert_eq!(err.line(), Some(2));
        let text = line(&opened(2)) + &line(&opened(1));
        assert!(parse_log(&text).unwrap_err().to_string().contains("does not increase"));
    }

    #[test]
    fn missing_log_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let c = read_log(&dir.path().join("nope.jsonl")).unwrap();
        assert!(c.records.is_empty() && !c.torn_tail);
    }

    #[test]
    fn faulty_sink_tears_the_line_and_stays_down() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let mut log = EventLog::resume(&path, &LogContents::default(), &faulty_sinks(2)).unwrap();
        for s in 1..=2 {
            log.append("s", Timestamp(s), opened(s).payload).unwrap();
        }
        assert!(log.append("s", Timestamp(3), opened(3).payload).is_err());
        assert_eq!(log.next_seq(), 3);
        assert!(log.append("s", Timestamp(4), opened(4).payload).is_err());
        let c = read_log(&path).unwrap();
        assert_eq!(c.records.len(), 2);
        assert!(c.torn_tail);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_snapshot(dir.path()).unwrap(), None);
        let snap = Snapshot { version: SNAPSHOT_VERSION, seq: 7, sessions: Vec::new() };
        write_snapshot(dir.path(), &snap).unwrap();
        assert_eq!(read_snapshot(dir.path()).unwrap(), Some(snap));
    }
}
