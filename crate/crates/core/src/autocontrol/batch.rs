//! Multi-junction batch: visit fixed slot coordinates in order, aligning,
//! lowering and measuring at each.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    auto_align, auto_lower_joint, auto_lower_sequential, run_sweep, AlignmentParams, LoweringParams, Outcome,
    ProcedureError, ProcedureKind, Run, SweepParams,
};
use crate::config::MachineConfig;
use crate::events::SimEvent;
use crate::geometry::WorldPoint;
use crate::gcode::Reply;
use crate::machine::Probe;
use crate::measurement::MeasurementResult;
use crate::sim::Simulator;
use crate::stage::{StageCommand, StageTarget};
use crate::vision::SceneDescription;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatchError {
    #[error("batch plan has no slots")]
    Empty,
    #[error("slots {0} and {1} coincide")]
    Duplicate(usize, usize),
    #[error("slot {0} lies outside the carriage travel")]
    OutOfRange(usize),
    #[error("slot {0}: {1}")]
    InvalidOverride(usize, String),
    #[error(transparent)]
    Procedure(#[from] ProcedureError),
}

/// Per-slot departures from the base scene.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SlotOverrides {
    /// True junction position relative to the nominal slot (mm).
    pub jj_offset: Option<[f64; 2]>,
    pub detect_prob: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub pad_axis_angle: Option<f64>,
    pub true_resistance: Option<f64>,
    pub surface_z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSlot {
    /// Nominal junction position on the printer frame (mm).
    pub position: WorldPoint<f64>,
    #[serde(default)]
    pub overrides: SlotOverrides,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchPlan {
    pub slots: Vec<BatchSlot>,
}

impl BatchPlan {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self, cfg: &MachineConfig) -> Result<(), BatchError> {
        if self.slots.is_empty() {
            return Err(BatchError::Empty);
        }
        for (i, a) in self.slots.iter().enumerate() {
            let p = a.position;
            let lim = cfg.axis_limits;
            if !(lim.x.contains(p.x) && lim.y.contains(p.y)) {
                return Err(BatchError::OutOfRange(i));
            }
            if let Some(d) = a.overrides.detect_prob {
                if !(0.0..=1.0).contains(&d) {
                    return Err(BatchError::InvalidOverride(i, "detect_prob outside [0, 1]".into()));
                }
            }
            if let Some((j, _)) = self.slots[..i].iter().enumerate().find(|(_, b)| b.position == p) {
                return Err(BatchError::Duplicate(j, i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchParams {
    pub align: AlignmentParams,
    pub lowering: LoweringParams,
    pub sweep: SweepParams,
    /// Probe lift between slots (mm).
    pub raise_height: f64,
}

impl BatchParams {
    pub fn standard() -> Self {
        Self {
            raise_height: 1.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFailure {
    /// Step that failed: "move", "align", "lower" or "measure".
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlotRecord {
    Measured { slot: usize, result: MeasurementResult },
    Failed { slot: usize, failure: SlotFailure },
}

impl SlotRecord {
    pub fn slot(&self) -> usize {
        match self {
            SlotRecord::Measured { slot, .. } | SlotRecord::Failed { slot, .. } => *slot,
        }
    }

    pub fn is_measured(&self) -> bool {
        matches!(self, SlotRecord::Measured { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub records: Vec<SlotRecord>,
    /// True when an emergency stop ended the batch early.
    pub aborted: bool,
}

fn fail(slot: usize, stage: &str, reason: impl ToString) -> SlotRecord {
    SlotRecord::Failed {
        slot,
        failure: SlotFailure {
            stage: stage.into(),
            reason: reason.to_string(),
        },
    }
}

enum Step {
    Record(SlotRecord),
    Abort(SlotRecord),
}

fn raise(sim: &mut Simulator, height: f64) -> bool {
    let steps = (height / sim.config().stage_step_pitch).round() as i32;
    if steps <= 0 {
        return true;
    }
    let cmd = StageCommand::Move {
        target: StageTarget::AllZ,
        steps,
    };
    matches!(sim.stage(&cmd, true), Ok(m) if !m.stopped)
}

fn visit(sim: &mut Simulator, index: usize, slot: &BatchSlot, base: &SceneDescription, p: &BatchParams, lowered: &mut bool) -> Step {
    let o = slot.overrides;
    let mut scene = base.clone();
    let off = o.jj_offset.unwrap_or([0.0, 0.0]);
    scene.jj_center = WorldPoint::new(slot.position.x + off[0], slot.position.y + off[1]);
    scene.detect_prob = o.detect_prob.unwrap_or(scene.detect_prob);
    scene.noise_sigma = o.noise_sigma.unwrap_or(scene.noise_sigma);
    scene.pad_axis_angle = o.pad_axis_angle.unwrap_or(scene.pad_axis_angle);
    scene.true_resistance = o.true_resistance.unwrap_or(scene.true_resistance);
    scene.surface_z = o.surface_z.unwrap_or(scene.surface_z);
    if let Err(e) = scene.validate() {
        return Step::Record(fail(index, "move", e));
    }
    sim.set_scene(scene);

    // Carriage so that the midpoint of the two tips sits over the slot.
    let (s, cfg) = (sim.state(), sim.config());
    let (a, b) = (s.tip_xy(Probe::Z, cfg), s.tip_xy(Probe::Yz, cfg));
    let mid = WorldPoint::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let target = WorldPoint::new(
        slot.position.x - (mid.x - s.carriage.x),
        slot.position.y - (mid.y - s.carriage.y),
    );
    if sim.interlock_check() {
        return Step::Abort(fail(index, "move", "emergency stop"));
    }
    sim.send_gcode("G90");
    if let Reply::Error(e) = sim.send_gcode(&format!("G0 X{} Y{}", target.x, target.y)) {
        if sim.state().estop_latched {
            return Step::Abort(fail(index, "move", e));
        }
        return Step::Record(fail(index, "move", e));
    }

    match auto_align(sim, &p.align) {
        Ok(r) if r.outcome == Outcome::EStop => return Step::Abort(fail(index, "align", "emergency stop")),
        Ok(r) if !r.converged() => return Step::Record(fail(index, "align", format!("{:?}", r.outcome))),
        Err(e) => return Step::Record(fail(index, "align", e)),
        Ok(_) => {}
    }

    let lowering = if sim.lowered_once() {
        auto_lower_joint(sim, &p.lowering)
    } else {
        auto_lower_sequential(sim, &p.lowering)
    };
    *lowered = true;
    match lowering {
        Ok(r) if r.outcome == Outcome::EStop => return Step::Abort(fail(index, "lower", "emergency stop")),
        Ok(r) if !r.converged() => return Step::Record(fail(index, "lower", format!("{:?}", r.outcome))),
        Err(e) => return Step::Record(fail(index, "lower", e)),
        Ok(_) => {}
    }

    match run_sweep(sim, &p.sweep) {
        Ok(run) if run.procedure.outcome == Outcome::EStop => Step::Abort(fail(index, "measure", "emergency stop")),
        Ok(run) => match run.measurement {
            Ok(result) => {
                sim.emit(SimEvent::Measurement {
                    timestamp: sim.clock(),
                    slot: Some(index),
                    result: result.clone(),
                });
                Step::Record(SlotRecord::Measured { slot: index, result })
            }
            Err(e) => Step::Record(fail(index, "measure", e)),
        },
        Err(e) => Step::Record(fail(index, "measure", e)),
    }
}

/// Runs every slot in order. Per-slot failures are recorded and the batch
/// moves on; only an emergency stop ends it early.
pub fn run_batch(sim: &mut Simulator, plan: &BatchPlan, p: &BatchParams) -> Result<BatchOutcome, BatchError> {
    plan.validate(sim.config())?;
    if !(p.raise_height >= 0.0 && p.raise_height.is_finite()) {
        return Err(ProcedureError::InvalidParams("raise_height must be >= 0".into()).into());
    }
    let run = Run::start(sim, ProcedureKind::Batch)?;
    let base = sim.scene().clone();
    let mut records = Vec::with_capacity(plan.slots.len());
    let mut lowered = false;
    let mut aborted = false;
    for (index, slot) in plan.slots.iter().enumerate() {
        if lowered {
            if !raise(sim, p.raise_height) {
                aborted = true;
                records.push(fail(index, "move", "emergency stop while raising"));
                break;
            }
            lowered = false;
        }
        match visit(sim, index, slot, &base, p, &mut lowered) {
            Step::Record(r) => {
                run.iteration(sim, index as u32 + 1, None, None);
                records.push(r);
            }
            Step::Abort(r) => {
                records.push(r);
                aborted = true;
                break;
            }
        }
    }
    if lowered && !aborted && !raise(sim, p.raise_height) {
        aborted = true;
    }
    sim.set_scene(base);
    let measured = records.iter().filter(|r| r.is_measured()).count() as u32;
    let outcome = if aborted { Outcome::EStop } else { Outcome::Converged };
    run.finish(sim, outcome, measured, None, None);
    Ok(BatchOutcome { records, aborted })
}
