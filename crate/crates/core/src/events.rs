//! Events emitted by the simulator as the clock advances.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::autocontrol::{ProcedureKind, ProcedureResult};
use crate::force::ForceReading;
use crate::machine::MachineState;
use crate::measurement::{IVSample, MeasurementResult};
use crate::vision::Detection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Started,
    /// Alignment correction, lowering threshold crossing, or batch slot.
    Iteration {
        index: u32,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        residual: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        force: Option<f64>,
    },
    Stopped { result: ProcedureResult },
    /// Refused before starting; nothing moved.
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureEvent {
    pub timestamp: f64,
    pub procedure: ProcedureKind,
    #[serde(flatten)]
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimEvent {
    Force(ForceReading),
    State {
        timestamp: f64,
        state: MachineState,
    },
    Detections {
        timestamp: f64,
        detections: Vec<Detection<f64>>,
    },
    Procedure(ProcedureEvent),
    /// The stop interlock was observed at the given check, in `state`.
    Interlock {
        timestamp: f64,
        check: u64,
        state: MachineState,
    },
    SweepSample {
        timestamp: f64,
        sample: IVSample,
    },
    Measurement {
        timestamp: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        slot: Option<usize>,
        result: MeasurementResult,
    },
}

impl SimEvent {
    pub fn timestamp(&self) -> f64 {
        match self {
            SimEvent::Force(r) => r.timestamp,
            SimEvent::Procedure(p) => p.timestamp,
            SimEvent::State { timestamp, .. }
            | SimEvent::Detections { timestamp, .. }
            | SimEvent::Interlock { timestamp, .. }
            | SimEvent::SweepSample { timestamp, .. }
            | SimEvent::Measurement { timestamp, .. } => *timestamp,
        }
    }

    /// Lifecycle events are never dropped by lossy consumers.
    pub fn is_lifecycle(&self) -> bool {
        matches!(
            self,
            SimEvent::Procedure(_) | SimEvent::Interlock { .. } | SimEvent::Measurement { .. }
        )
    }
}

pub trait EventSink: Send {
    fn emit(&mut self, event: SimEvent);
}

impl EventSink for Vec<SimEvent> {
    fn emit(&mut self, event: SimEvent) {
        self.push(event);
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _: SimEvent) {}
}

/// Collects events behind a shared handle, for inspection while the
/// simulator still owns the sink.
#[derive(Debug, Default, Clone)]
pub struct SharedSink(pub Arc<Mutex<Vec<SimEvent>>>);

impl SharedSink {
    pub fn take(&self) -> Vec<SimEvent> {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

impl EventSink for SharedSink {
    fn emit(&mut self, event: SimEvent) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(event);
    }
}
