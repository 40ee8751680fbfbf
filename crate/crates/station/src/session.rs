//! Append-only session log: a header line, then one JSON record per line.
//!
//! ```text
//! {"format":"probestation-session","version":1,"seed":0,"setup":{...}}
//! {"seq":0,"timestamp":0.0,"kind":"command","payload":{"command":{"cmd":"tare"}}}
//! {"seq":1,"timestamp":0.0125,"kind":"telemetry","payload":{"type":"force",...}}
//! ```
//!
//! Commands are written and flushed before they execute. The file is also
//! synced whenever a procedure starts, stops or is rejected.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use probestation_core::events::Phase;
use probestation_core::{SimEvent, SimSetup};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::ApiCommand;

pub const FORMAT: &str = "probestation-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub setup: SimSetup,
}

impl SessionHeader {
    pub fn new(setup: &SimSetup) -> Self {
        Self {
            format: FORMAT.into(),
            version: SESSION_VERSION,
            seed: setup.seed,
            setup: setup.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub command: ApiCommand,
    /// A stop that arrived while another command was executing. Its effect
    /// is recorded by the interlock event that observed it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub preempting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    Command(CommandEntry),
    Telemetry(SimEvent),
    ProcedureEvent(SimEvent),
    Measurement(SimEvent),
}

impl RecordBody {
    pub fn from_event(event: SimEvent) -> Self {
        match event {
            SimEvent::Procedure(_) | SimEvent::Interlock { .. } => RecordBody::ProcedureEvent(event),
            SimEvent::Measurement { .. } => RecordBody::Measurement(event),
            _ => RecordBody::Telemetry(event),
        }
    }

    pub fn event(&self) -> Option<&SimEvent> {
        match self {
            RecordBody::Command(_) => None,
            RecordBody::Telemetry(e) | RecordBody::ProcedureEvent(e) | RecordBody::Measurement(e) => Some(e),
        }
    }

    pub fn command(&self) -> Option<&CommandEntry> {
        match self {
            RecordBody::Command(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub seq: u64,
    pub timestamp: f64,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("not a session log (format {0:?})")]
    Format(String),
}

/// A parsed log. An empty file yields no header and no records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Session {
    pub header: Option<SessionHeader>,
    pub records: Vec<SessionRecord>,
}

impl Session {
    pub fn events(&self) -> impl Iterator<Item = &SimEvent> {
        self.records.iter().filter_map(|r| r.body.event())
    }
}

pub fn parse_session(reader: impl BufRead) -> Result<Session, SessionError> {
    let mut session = Session::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |source| SessionError::Parse { line: i + 1, source };
        if session.header.is_none() && session.records.is_empty() {
            let header: SessionHeader = serde_json::from_str(&line).map_err(parse_err)?;
            if header.format != FORMAT {
                return Err(SessionError::Format(header.format));
            }
            session.header = Some(header);
        } else {
            session.records.push(serde_json::from_str(&line).map_err(parse_err)?);
        }
    }
    Ok(session)
}

pub fn read_session(path: impl AsRef<Path>) -> Result<Session, SessionError> {
    parse_session(BufReader::new(File::open(path)?))
}

/// Writer side of a session. Records are numbered here, so `seq` is
/// strictly increasing in append order.
pub struct SessionLog {
    file: Option<BufWriter<File>>,
    retained: Option<Vec<SessionRecord>>,
    next_seq: u64,
    last_timestamp: f64,
    failed: Option<String>,
}

impl SessionLog {
    /// Keeps records in memory only.
    pub fn in_memory() -> Self {
        Self {
            file: None,
            retained: Some(Vec::new()),
            next_seq: 0,
            last_timestamp: 0.0,
            failed: None,
        }
    }

    /// Creates `path` and writes the header. With `retain`, records are also
    /// kept in memory.
    pub fn create(path: impl AsRef<Path>, header: &SessionHeader, retain: bool) -> Result<Self, SessionError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        w.get_ref().sync_data()?;
        Ok(Self {
            file: Some(w),
            retained: retain.then(Vec::new),
            next_seq: 0,
            last_timestamp: 0.0,
            failed: None,
        })
    }

    pub fn append(&mut self, timestamp: f64, body: RecordBody) -> u64 {
        let boundary = matches!(
            body.event(),
            Some(SimEvent::Procedure(p)) if !matches!(p.phase, Phase::Iteration { .. })
        );
        let is_command = matches!(body, RecordBody::Command(_));
        let record = SessionRecord {
            seq: self.next_seq,
            timestamp,
            body,
        };
        self.next_seq += 1;
        self.last_timestamp = self.last_timestamp.max(timestamp);
        if let Some(w) = self.file.as_mut() {
            let written = serde_json::to_writer(&mut *w, &record)
                .map_err(std::io::Error::from)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| match (boundary, is_command) {
                    (true, _) => w.flush().and_then(|_| w.get_ref().sync_data()),
                    (false, true) => w.flush(),
                    _ => Ok(()),
                });
            if let Err(e) = written {
                if self.failed.is_none() {
                    log::error!("session log write failed: {e}");
                    self.failed = Some(e.to_string());
                }
            }
        }
        if let Some(r) = self.retained.as_mut() {
            r.push(record.clone());
        }
        record.seq
    }

    pub fn flush(&mut self) -> Result<(), SessionError> {
        if let Some(w) = self.file.as_mut() {
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[SessionRecord] {
        self.retained.as_deref().unwrap_or(&[])
    }

    pub fn take_records(&mut self) -> Vec<SessionRecord> {
        self.retained.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Latest timestamp appended so far.
    pub fn last_timestamp(&self) -> f64 {
        self.last_timestamp
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    /// First write error, if any.
    pub fn failure(&self) -> Option<&str> {
        self.failed.as_deref()
    }
}

impl Drop for SessionLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use probestation_core::ForceReading;

    fn force(t: f64) -> SimEvent {
        SimEvent::Force(ForceReading {
            newtons: 0.1 + 0.2,
            raw_counts: 7,
            timestamp: t,
        })
    }

    #[test]
    fn records_round_trip_exactly() {
        let rec = SessionRecord {
            seq: 4,
            timestamp: 1.0 / 3.0,
            body: RecordBody::from_event(force(1.0 / 3.0)),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains(r#""kind":"telemetry""#));
        assert_eq!(serde_json::from_str::<SessionRecord>(&line).unwrap(), rec);

        let cmd = SessionRecord {
            seq: 5,
            timestamp: 0.0,
            body: RecordBody::Command(CommandEntry {
                command: ApiCommand::StopAll,
                preempting: true,
            }),
        };
        let line = serde_json::to_string(&cmd).unwrap();
        assert_eq!(serde_json::from_str::<SessionRecord>(&line).unwrap(), cmd);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ndjson");
        let header = SessionHeader::new(&SimSetup::default().with_seed(9));
        {
            let mut log = SessionLog::create(&path, &header, false).unwrap();
            assert_eq!(log.append(0.0, RecordBody::from_event(force(0.0))), 0);
            assert_eq!(log.append(0.0125, RecordBody::from_event(force(0.0125))), 1);
        }
        let s = read_session(&path).unwrap();
        assert_eq!(s.header.unwrap().seed, 9);
        assert_eq!(s.records.len(), 2);
        assert_eq!(s.records[1].seq, 1);
    }

    #[test]
    fn empty_file_is_empty_session() {
        let s = parse_session(std::io::Cursor::new("")).unwrap();
        assert_eq!(s, Session::default());
    }

    #[test]
    fn foreign_header_rejected() {
        let err = parse_session(std::io::Cursor::new(r#"{"format":"other","version":1,"seed":0,"setup":{}}"#)).unwrap_err();
        assert!(matches!(err, SessionError::Format(_)));
    }
}
