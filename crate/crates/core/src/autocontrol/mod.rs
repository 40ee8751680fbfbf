//! Closed-loop procedures run against the simulator: alignment, the two
//! lowering state machines, the measurement sweep, pre-alignment assists and
//! batch sequencing.
//!
//! Every procedure emits `Started`, zero or more `Iteration` events and one
//! `Stopped` event carrying its [`ProcedureResult`].

mod align;
mod assist;
mod batch;
mod lowering;
mod sweep;

pub use align::{auto_align, AlignmentParams};
pub use assist::{adjust_probe_spacing, adjust_rotation};
pub use batch::{run_batch, BatchError, BatchOutcome, BatchParams, BatchPlan, BatchSlot, SlotFailure, SlotOverrides, SlotRecord};
pub use lowering::{auto_lower_joint, auto_lower_sequential, LoweringParams};
pub use sweep::{run_sweep, SweepParams, SweepRun};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Phase, ProcedureEvent, SimEvent};
use crate::sim::Simulator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureKind {
    Align,
    LowerSequential,
    LowerJoint,
    Sweep,
    AdjustSpacing,
    AdjustRotation,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    MaxIterations,
    EStop,
    LimitTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureResult {
    pub outcome: Outcome,
    pub iterations: u32,
    /// Alignment: larger of the two tip-to-target distances (mm).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_error: Option<f64>,
    /// Lowering: last force reading (N).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_force: Option<f64>,
    /// Simulation seconds spent in the procedure.
    pub elapsed: f64,
}

impl ProcedureResult {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }
}

/// Refusals before a procedure starts moving anything.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcedureError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("load cell not tared")]
    NotTared,
    #[error("emergency stop latched")]
    EStopLatched,
    #[error("probe tips differ in height by {0:.4} mm; lower sequentially first")]
    TipsNotEqualized(f64),
}

pub(crate) struct Run {
    kind: ProcedureKind,
    started: f64,
}

impl Run {
    pub(crate) fn start(sim: &mut Simulator, kind: ProcedureKind) -> Result<Self, ProcedureError> {
        if sim.state().estop_latched {
            return Err(ProcedureError::EStopLatched);
        }
        let started = sim.clock();
        sim.emit(SimEvent::Procedure(ProcedureEvent {
            timestamp: started,
            procedure: kind,
            phase: Phase::Started,
        }));
        Ok(Self { kind, started })
    }

    pub(crate) fn iteration(&self, sim: &mut Simulator, index: u32, residual: Option<f64>, force: Option<f64>) {
        let timestamp = sim.clock();
        sim.emit(SimEvent::Procedure(ProcedureEvent {
            timestamp,
            procedure: self.kind,
            phase: Phase::Iteration {
                index,
                residual,
                force,
            },
        }));
    }

    pub(crate) fn finish(
        self,
        sim: &mut Simulator,
        outcome: Outcome,
        iterations: u32,
        residual_error: Option<f64>,
        final_force: Option<f64>,
    ) -> ProcedureResult {
        let result = ProcedureResult {
            outcome,
            iterations,
            residual_error,
            final_force,
            elapsed: sim.clock() - self.started,
        };
        sim.emit(SimEvent::Procedure(ProcedureEvent {
            timestamp: sim.clock(),
            procedure: self.kind,
            phase: Phase::Stopped { result },
        }));
        result
    }
}
