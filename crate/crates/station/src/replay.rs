//! Re-executes a session log against a fresh simulator and compares every
//! non-command record with the original.
//!
//! Stops that preempted a running command are not re-sent. Their effect is
//! reproduced by scheduling the interlock to fire at the check index the
//! original log recorded.

use probestation_core::SimEvent;
use thiserror::Error;

use crate::session::{RecordBody, Session, SessionRecord, SESSION_VERSION};
use crate::service::{Station, StationError, StationOptions};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("session has records but no header")]
    MissingHeader,
    #[error("session format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("seed mismatch: log was recorded with seed {logged}, replay requested {requested}")]
    Seed { logged: u64, requested: u64 },
    #[error("header seed {header} disagrees with the recorded setup seed {setup}")]
    InconsistentSeed { header: u64, setup: u64 },
    #[error("sequence gap at record {index}: expected seq {expected}, found {found}")]
    SeqGap { index: usize, expected: u64, found: u64 },
    #[error(transparent)]
    Station(#[from] StationError),
}

/// First record where the replay disagrees with the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Position among the non-command records.
    pub index: usize,
    pub logged: Option<SessionRecord>,
    pub replayed: Option<SessionRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    /// Everything the replay produced, commands included.
    pub records: Vec<SessionRecord>,
    /// Non-command records compared.
    pub compared: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn check_integrity(session: &Session, requested_seed: Option<u64>) -> Result<(), ReplayError> {
    let Some(header) = &session.header else {
        return if session.records.is_empty() {
            Ok(())
        } else {
            Err(ReplayError::MissingHeader)
        };
    };
    if header.version != SESSION_VERSION {
        return Err(ReplayError::Version {
            found: header.version,
            expected: SESSION_VERSION,
        });
    }
    if header.seed != header.setup.seed {
        return Err(ReplayError::InconsistentSeed {
            header: header.seed,
            setup: header.setup.seed,
        });
    }
    if let Some(requested) = requested_seed {
        if requested != header.seed {
            return Err(ReplayError::Seed {
                logged: header.seed,
                requested,
            });
        }
    }
    for (index, rec) in session.records.iter().enumerate() {
        if rec.seq != index as u64 {
            return Err(ReplayError::SeqGap {
                index,
                expected: index as u64,
                found: rec.seq,
            });
        }
    }
    Ok(())
}

/// Bitwise comparison through the serialized form.
fn same(a: &SessionRecord, b: &SessionRecord) -> bool {
    a.timestamp.to_bits() == b.timestamp.to_bits()
        && serde_json::to_string(&a.body).ok() == serde_json::to_string(&b.body).ok()
}

pub fn replay_session(session: &Session, requested_seed: Option<u64>) -> Result<ReplayReport, ReplayError> {
    check_integrity(session, requested_seed)?;
    let Some(header) = &session.header else {
        return Ok(ReplayReport::default());
    };
    if session.records.is_empty() {
        return Ok(ReplayReport::default());
    }

    let station = Station::new(StationOptions::in_memory(header.setup.clone()))?;
    let stops: Vec<u64> = session
        .events()
        .filter_map(|e| match e {
            SimEvent::Interlock { check, .. } => Some(*check),
            _ => None,
        })
        .collect();
    station.with_sim(|sim| stops.iter().for_each(|&c| sim.schedule_stop(c)));

    for rec in &session.records {
        let RecordBody::Command(entry) = &rec.body else { continue };
        if entry.preempting || entry.command.is_query() {
            continue;
        }
        if let Err(e) = station.handle(entry.command.clone()) {
            log::warn!("replayed command {} refused: {e}", rec.seq);
        }
        station.wait_idle();
    }

    let records = station.records();
    let logged: Vec<&SessionRecord> = session.records.iter().filter(|r| r.body.event().is_some()).collect();
    let replayed: Vec<&SessionRecord> = records.iter().filter(|r| r.body.event().is_some()).collect();
    let compared = logged.len().max(replayed.len());
    let divergence = (0..compared)
        .find(|&i| match (logged.get(i), replayed.get(i)) {
            (Some(a), Some(b)) => !same(a, b),
            _ => true,
        })
        .map(|index| Divergence {
            index,
            logged: logged.get(index).map(|r| (*r).clone()),
            replayed: replayed.get(index).map(|r| (*r).clone()),
        });
    Ok(ReplayReport {
        records,
        compared,
        divergence,
    })
}
