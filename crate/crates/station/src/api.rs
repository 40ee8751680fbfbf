//! Wire schema: newline-delimited JSON requests, responses and pushed events.
//!
//! Every message carries `"v": 1`. A client sends
//!
//! ```json
//! {"v":1,"id":7,"op":"command","command":{"cmd":"jog","axis":"x","sign":"+"}}
//! {"v":1,"id":8,"op":"subscribe","capacity":4096}
//! ```
//!
//! and receives `{"v":1,"type":"response","id":7,"ok":{"ack":"done"}}` (or
//! `"error":{...}`), then `event` and `gap` messages once subscribed.

use probestation_core::autocontrol::{
    AlignmentParams, BatchParams, BatchPlan, LoweringParams, ProcedureKind, SweepParams,
};
use probestation_core::geometry::{Axis, Sign};
use probestation_core::stage::StageTarget;
use probestation_core::{ForceReading, MachineState, SimEvent};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIRE_VERSION: u32 = 1;

/// Longest idle a single command may request (s).
pub const MAX_IDLE_SECONDS: f64 = 3600.0;

/// One operator action. Manual controls first, then the automated procedures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApiCommand {
    /// One click of a carriage arrow: 0.1 mm along `axis`.
    Jog { axis: Axis, sign: Sign },
    /// A raw G-code line for the printer; the reply is returned verbatim.
    SendGcode { line: String },
    /// Probe stage move in motor steps.
    StageMove { target: StageTarget, steps: i32 },
    /// One click of the chip rotation buttons.
    Rotate { sign: Sign },
    /// Emergency stop. Always accepted, preempts a running procedure.
    StopAll,
    Tare,
    AutoAlign {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<AlignmentParams>,
    },
    AutoLowerSequential {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<LoweringParams>,
    },
    AutoLowerJoint {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<LoweringParams>,
    },
    RunSweep {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<SweepParams>,
    },
    RunBatch {
        plan: BatchPlan,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<BatchParams>,
    },
    GetState,
    /// Lets simulated time pass with nothing moving.
    Idle { seconds: f64 },
    /// Releases a latched emergency stop.
    ClearEstop,
}

impl ApiCommand {
    /// The procedure this command starts, if it runs asynchronously.
    pub fn procedure(&self) -> Option<ProcedureKind> {
        match self {
            ApiCommand::AutoAlign { .. } => Some(ProcedureKind::Align),
            ApiCommand::AutoLowerSequential { .. } => Some(ProcedureKind::LowerSequential),
            ApiCommand::AutoLowerJoint { .. } => Some(ProcedureKind::LowerJoint),
            ApiCommand::RunSweep { .. } => Some(ProcedureKind::Sweep),
            ApiCommand::RunBatch { .. } => Some(ProcedureKind::Batch),
            _ => None,
        }
    }

    /// Commands that never change the machine.
    pub fn is_query(&self) -> bool {
        matches!(self, ApiCommand::GetState)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub state: MachineState,
    pub force: ForceReading,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedure: Option<ProcedureKind>,
    pub tared: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ack", rename_all = "snake_case")]
pub enum Ack {
    Done,
    /// Printer reply line, verbatim.
    Reply { line: String },
    Stage { executed_steps: u32, truncated: bool, stopped: bool },
    /// The procedure is running; lifecycle events follow on the stream.
    Accepted { procedure: ProcedureKind },
    /// `preempted` is true when a running command was interrupted.
    Stopping { preempted: bool },
    State(StateSnapshot),
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ApiError {
    #[error("procedure {running:?} is running")]
    BusyProcedureRunning { running: ProcedureKind },
    #[error("unsupported wire version {got} (expected {expected})")]
    UnsupportedVersion { got: u32, expected: u32 },
    #[error("malformed request: {message}")]
    Malformed { message: String },
    #[error("invalid command: {message}")]
    Invalid { message: String },
    #[error("refused: {message}")]
    Refused { message: String },
    #[error("internal error: {message}")]
    Internal { message: String },
}

impl ApiError {
    pub fn invalid(e: impl ToString) -> Self {
        ApiError::Invalid { message: e.to_string() }
    }

    pub fn refused(e: impl ToString) -> Self {
        ApiError::Refused { message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RequestOp {
    Command { command: ApiCommand },
    /// Starts the event stream on this connection.
    Subscribe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<usize>,
    },
    Unsubscribe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub op: RequestOp,
}

impl Request {
    pub fn command(id: u64, command: ApiCommand) -> Self {
        Self {
            v: WIRE_VERSION,
            id: Some(id),
            op: RequestOp::Command { command },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok(Ack),
    Error(ApiError),
}

impl From<Result<Ack, ApiError>> for Outcome {
    fn from(r: Result<Ack, ApiError>) -> Self {
        match r {
            Ok(a) => Outcome::Ok(a),
            Err(e) => Outcome::Error(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Response {
        v: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        #[serde(flatten)]
        outcome: Outcome,
    },
    /// `seq` is the event's position in the session log.
    Event { v: u32, seq: u64, event: SimEvent },
    /// `dropped` telemetry events were discarded for this subscriber.
    Gap { v: u32, dropped: u64 },
}

impl ServerMessage {
    pub fn response(id: Option<u64>, outcome: impl Into<Outcome>) -> Self {
        ServerMessage::Response {
            v: WIRE_VERSION,
            id,
            outcome: outcome.into(),
        }
    }
}

/// Parses one request line, checking the schema version.
pub fn parse_request(line: &str) -> Result<Request, ApiError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ApiError::Malformed { message: e.to_string() })?;
    let got = value
        .get("v")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ApiError::Malformed { message: "missing version field \"v\"".into() })?;
    if got != WIRE_VERSION as u64 {
        return Err(ApiError::UnsupportedVersion {
            got: got.min(u32::MAX as u64) as u32,
            expected: WIRE_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| ApiError::Malformed { message: e.to_string() })
}
