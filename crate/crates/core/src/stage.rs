//! Microcontroller-driven probe stages: line protocol and step-level motion.
//!
//! Wire grammar, one command per line:
//!
//! ```text
//! MOVE <YZ_Y|YZ_Z|Z_Z|ROTATION|ALL_Z> <signed steps>
//! STOP
//! STATUS
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{MachineConfig, Span};
use crate::machine::{MachineState, StagePosition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StageParseError {
    #[error("empty line")]
    Empty,
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("missing {0}")]
    MissingArgument(&'static str),
    #[error("invalid step count {0:?}")]
    InvalidSteps(String),
    #[error("step count must be non-zero")]
    ZeroSteps,
    #[error("step count {0} overflows")]
    StepsOverflow(String),
    #[error("unexpected token {0:?}")]
    UnexpectedToken(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StageError {
    #[error("emergency stop latched")]
    EStopLatched,
    #[error("step count must be non-zero")]
    ZeroSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageTarget {
    #[serde(rename = "YZ_Y")]
    YzY,
    #[serde(rename = "YZ_Z")]
    YzZ,
    #[serde(rename = "Z_Z")]
    ZZ,
    #[serde(rename = "ROTATION")]
    Rotation,
    /// Both Z stages together.
    #[serde(rename = "ALL_Z")]
    AllZ,
}

impl StageTarget {
    pub const ALL: [StageTarget; 5] = [
        StageTarget::YzY,
        StageTarget::YzZ,
        StageTarget::ZZ,
        StageTarget::Rotation,
        StageTarget::AllZ,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            StageTarget::YzY => "YZ_Y",
            StageTarget::YzZ => "YZ_Z",
            StageTarget::ZZ => "Z_Z",
            StageTarget::Rotation => "ROTATION",
            StageTarget::AllZ => "ALL_Z",
        }
    }

    fn from_wire(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.wire_name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "UPPERCASE")]
pub enum StageCommand {
    Move { target: StageTarget, steps: i32 },
    Stop,
    Status,
}

impl fmt::Display for StageCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageCommand::Move { target, steps } => write!(f, "MOVE {} {steps}", target.wire_name()),
            StageCommand::Stop => f.write_str("STOP"),
            StageCommand::Status => f.write_str("STATUS"),
        }
    }
}

pub fn parse_stage_command(line: &str) -> Result<StageCommand, StageParseError> {
    let mut toks = line.split_ascii_whitespace();
    let verb = toks.next().ok_or(StageParseError::Empty)?;
    let cmd = if verb.eq_ignore_ascii_case("MOVE") {
        let target = toks.next().ok_or(StageParseError::MissingArgument("target"))?;
        let target = StageTarget::from_wire(target)
            .ok_or_else(|| StageParseError::UnknownTarget(target.to_string()))?;
        let steps = toks.next().ok_or(StageParseError::MissingArgument("steps"))?;
        let digits = steps.strip_prefix(['+', '-']).unwrap_or(steps);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(StageParseError::InvalidSteps(steps.to_string()));
        }
        let steps: i32 = match steps.parse::<i32>() {
            Ok(n) => n,
            Err(_) => return Err(StageParseError::StepsOverflow(steps.to_string())),
        };
        if steps == 0 {
            return Err(StageParseError::ZeroSteps);
        }
        StageCommand::Move { target, steps }
    } else if verb.eq_ignore_ascii_case("STOP") {
        StageCommand::Stop
    } else if verb.eq_ignore_ascii_case("STATUS") {
        StageCommand::Status
    } else {
        return Err(StageParseError::UnknownVerb(verb.to_string()));
    };
    match toks.next() {
        Some(extra) => Err(StageParseError::UnexpectedToken(extra.to_string())),
        None => Ok(cmd),
    }
}

/// Decision returned by the per-step hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageMotion {
    pub state: MachineState,
    pub executed_steps: u32,
    /// Motion ended early because the next step would leave the stage's travel.
    pub truncated: bool,
    /// Motion ended early because the hook asked to stop.
    pub stopped: bool,
}

fn within(span: Span, pos: StagePosition, cfg: &MachineConfig) -> bool {
    span.contains(pos.mm(cfg))
}

/// Executes a stage command one motor step at a time.
///
/// `hook` runs before every step with the state so far and the number of
/// steps already executed; returning [`StepControl::Stop`] ends the motion
/// before the next step. Each step advances the clock by `1 / stage_step_rate`.
pub fn step_motion_with(
    cmd: &StageCommand,
    s: &MachineState,
    cfg: &MachineConfig,
    mut hook: impl FnMut(&MachineState, u32) -> StepControl,
) -> Result<StageMotion, StageError> {
    let idle = StageMotion {
        state: *s,
        executed_steps: 0,
        truncated: false,
        stopped: false,
    };
    let (target, steps) = match *cmd {
        StageCommand::Stop => {
            return Ok(StageMotion {
                stopped: true,
                ..idle
            })
        }
        StageCommand::Status => return Ok(idle),
        StageCommand::Move { target, steps } => (target, steps),
    };
    if s.estop_latched {
        return Err(StageError::EStopLatched);
    }
    if steps == 0 {
        return Err(StageError::ZeroSteps);
    }

    let dir = steps.signum() as i64;
    let total = steps.unsigned_abs();
    let start_clock = s.sim_clock;
    let limits = cfg.axis_limits;
    let mut state = *s;
    let mut executed = 0u32;
    let mut truncated = false;
    let mut stopped = false;

    while executed < total {
        if hook(&state, executed) == StepControl::Stop {
            stopped = true;
            break;
        }
        let mut next = state;
        let bump = |p: &mut StagePosition| p.0 += dir;
        let ok = match target {
            StageTarget::YzY => {
                bump(&mut next.yz_probe.y);
                within(limits.stage_y, next.yz_probe.y, cfg)
            }
            StageTarget::YzZ => {
                bump(&mut next.yz_probe.z);
                within(limits.stage_z, next.yz_probe.z, cfg)
            }
            StageTarget::ZZ => {
                bump(&mut next.z_probe);
                within(limits.stage_z, next.z_probe, cfg)
            }
            StageTarget::AllZ => {
                bump(&mut next.yz_probe.z);
                bump(&mut next.z_probe);
                within(limits.stage_z, next.yz_probe.z, cfg) && within(limits.stage_z, next.z_probe, cfg)
            }
            StageTarget::Rotation => {
                bump(&mut next.rotation_stage);
                true
            }
        };
        if !ok {
            truncated = true;
            break;
        }
        executed += 1;
        next.sim_clock = start_clock + executed as f64 / cfg.stage_step_rate;
        state = next;
    }

    Ok(StageMotion {
        state,
        executed_steps: executed,
        truncated,
        stopped,
    })
}

/// [`step_motion_with`] without interruption.
pub fn step_motion(cmd: &StageCommand, s: &MachineState, cfg: &MachineConfig) -> Result<StageMotion, StageError> {
    step_motion_with(cmd, s, cfg, |_, _| StepControl::Continue)
}

/// Status line reported by the controller for `STATUS`.
pub fn status_line(s: &MachineState) -> String {
    format!(
        "ok YZ_Y:{} YZ_Z:{} Z_Z:{} ROTATION:{}",
        s.yz_probe.y.0, s.yz_probe.z.0, s.z_probe.0, s.rotation_stage.0
    )
}
