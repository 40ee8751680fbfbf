//! Threshold-driven lowering. Each increment moves `step_size` motor steps,
//! then waits for a fresh force sample; a stage stops on the first sample
//! that exceeds its limit.

use serde::{Deserialize, Serialize};

use super::{Outcome, ProcedureError, ProcedureKind, ProcedureResult, Run};
use crate::machine::Probe;
use crate::sim::Simulator;
use crate::stage::{StageCommand, StageTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoweringParams {
    /// Z probe limit during sequential lowering (N).
    pub first_limit: f64,
    /// Total force limit once the YZ probe lands (N).
    pub second_limit: f64,
    /// Total force limit for joint lowering (N).
    pub joint_limit: f64,
    /// Motor steps per increment.
    pub step_size: u32,
    /// Largest tip height difference (mm) accepted for joint lowering.
    pub max_tip_mismatch: f64,
}

impl Default for LoweringParams {
    fn default() -> Self {
        Self {
            first_limit: 0.05,
            second_limit: 0.1,
            joint_limit: 0.1,
            step_size: 6,
            max_tip_mismatch: 0.05,
        }
    }
}

impl LoweringParams {
    pub fn validate(&self) -> Result<(), ProcedureError> {
        let bad = |m: &str| Err(ProcedureError::InvalidParams(m.into()));
        if !(self.first_limit > 0.0 && self.first_limit < self.second_limit && self.second_limit.is_finite()) {
            return bad("need 0 < first_limit < second_limit");
        }
        if !(self.joint_limit > 0.0 && self.joint_limit.is_finite()) {
            return bad("joint_limit must be > 0");
        }
        if self.step_size == 0 || self.step_size > i32::MAX as u32 {
            return bad("step_size must be >= 1");
        }
        if !(self.max_tip_mismatch >= 0.0) {
            return bad("max_tip_mismatch must be >= 0");
        }
        Ok(())
    }
}

enum Descent {
    Crossed(f64),
    Truncated(f64),
    Stopped(f64),
}

/// Lowers `target` until a reading exceeds `limit`, counting increments.
fn descend(sim: &mut Simulator, target: StageTarget, limit: f64, step_size: u32, increments: &mut u32) -> Descent {
    let mut reading = sim.wait_fresh_sample().newtons;
    let cmd = StageCommand::Move {
        target,
        steps: -(step_size as i32),
    };
    while reading <= limit {
        let motion = match sim.stage(&cmd, true) {
            Ok(m) => m,
            Err(_) => return Descent::Stopped(reading),
        };
        if motion.executed_steps > 0 {
            *increments += 1;
        }
        if motion.stopped {
            return Descent::Stopped(sim.last_force().newtons);
        }
        reading = sim.wait_fresh_sample().newtons;
        if motion.truncated {
            return Descent::Truncated(reading);
        }
    }
    Descent::Crossed(reading)
}

fn preflight(sim: &Simulator, p: &LoweringParams) -> Result<(), ProcedureError> {
    p.validate()?;
    if !sim.is_tared() {
        return Err(ProcedureError::NotTared);
    }
    if sim.state().estop_latched {
        return Err(ProcedureError::EStopLatched);
    }
    Ok(())
}

/// Z probe down to `first_limit`, then YZ probe down to `second_limit`.
pub fn auto_lower_sequential(sim: &mut Simulator, p: &LoweringParams) -> Result<ProcedureResult, ProcedureError> {
    preflight(sim, p)?;
    let run = Run::start(sim, ProcedureKind::LowerSequential)?;
    let mut n = 0;
    let phases = [(StageTarget::ZZ, p.first_limit), (StageTarget::YzZ, p.second_limit)];
    let mut force = 0.0;
    for (index, (target, limit)) in phases.into_iter().enumerate() {
        match descend(sim, target, limit, p.step_size, &mut n) {
            Descent::Crossed(f) => {
                force = f;
                run.iteration(sim, index as u32 + 1, None, Some(f));
            }
            Descent::Truncated(f) => return Ok(run.finish(sim, Outcome::LimitTruncated, n, None, Some(f))),
            Descent::Stopped(f) => return Ok(run.finish(sim, Outcome::EStop, n, None, Some(f))),
        }
    }
    sim.mark_lowered();
    Ok(run.finish(sim, Outcome::Converged, n, None, Some(force)))
}

/// Both Z stages together down to `joint_limit`. Requires tips at equal height.
pub fn auto_lower_joint(sim: &mut Simulator, p: &LoweringParams) -> Result<ProcedureResult, ProcedureError> {
    preflight(sim, p)?;
    let (s, cfg) = (sim.state(), sim.config());
    let mismatch = (s.tip_z(Probe::Z, cfg) - s.tip_z(Probe::Yz, cfg)).abs();
    if mismatch > p.max_tip_mismatch {
        return Err(ProcedureError::TipsNotEqualized(mismatch));
    }
    let run = Run::start(sim, ProcedureKind::LowerJoint)?;
    let mut n = 0;
    Ok(match descend(sim, StageTarget::AllZ, p.joint_limit, p.step_size, &mut n) {
        Descent::Crossed(f) => {
            run.iteration(sim, 1, None, Some(f));
            sim.mark_lowered();
            run.finish(sim, Outcome::Converged, n, None, Some(f))
        }
        Descent::Truncated(f) => run.finish(sim, Outcome::LimitTruncated, n, None, Some(f)),
        Descent::Stopped(f) => run.finish(sim, Outcome::EStop, n, None, Some(f)),
    })
}
