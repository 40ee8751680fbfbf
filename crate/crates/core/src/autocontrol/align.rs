use serde::{Deserialize, Serialize};

use super::{Outcome, ProcedureError, ProcedureKind, ProcedureResult, Run};
use crate::gcode::Reply;
use crate::geometry::{pixel_delta_to_machine_delta, PixelDelta};
use crate::sim::Simulator;
use crate::vision::locate_targets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentParams {
    /// Acceptance radius (mm) for both tips.
    pub tolerance: f64,
    /// Budget of corrective moves and failed detections.
    pub max_iterations: u32,
    /// Extra detections that must also be within tolerance before accepting.
    pub settle: u32,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            max_iterations: 10,
            settle: 0,
        }
    }
}

impl AlignmentParams {
    pub fn validate(&self) -> Result<(), ProcedureError> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(ProcedureError::InvalidParams("tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(ProcedureError::InvalidParams("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

enum Observation {
    Missing,
    Seen { residual: f64, correction: PixelDelta<f64> },
}

fn observe(sim: &mut Simulator) -> Observation {
    let dets = sim.detect();
    let scale = sim.config().pixel_scale;
    match locate_targets(&dets, sim.scene().pad_span, scale) {
        Err(_) => Observation::Missing,
        Ok(t) => {
            let ez = t.pad_targets.0 - t.z_tip;
            let eyz = t.pad_targets.1 - t.yz_tip;
            Observation::Seen {
                residual: ez.norm().max(eyz.norm()) * scale,
                correction: (ez + eyz).scale(0.5),
            }
        }
    }
}

/// Moves the carriage until both probe tips sit over their pad targets.
///
/// Each pass detects, converts the mean tip-to-target pixel error into a
/// carriage move and sends it as a relative G-code move.
pub fn auto_align(sim: &mut Simulator, p: &AlignmentParams) -> Result<ProcedureResult, ProcedureError> {
    p.validate()?;
    let run = Run::start(sim, ProcedureKind::Align)?;
    let mut moves = 0u32;
    let mut spent = 0u32;
    let mut last_residual = None;

    loop {
        if sim.interlock_check() {
            return Ok(run.finish(sim, Outcome::EStop, moves, last_residual, None));
        }
        let (residual, correction) = match observe(sim) {
            Observation::Missing => {
                spent += 1;
                if spent >= p.max_iterations {
                    return Ok(run.finish(sim, Outcome::MaxIterations, moves, last_residual, None));
                }
                continue;
            }
            Observation::Seen { residual, correction } => (residual, correction),
        };
        last_residual = Some(residual);

        if residual <= p.tolerance {
            let mut confirmed = true;
            for _ in 0..p.settle {
                match observe(sim) {
                    Observation::Seen { residual: r, .. } if r <= p.tolerance => last_residual = Some(r),
                    _ => {
                        confirmed = false;
                        break;
                    }
                }
            }
            if confirmed {
                return Ok(run.finish(sim, Outcome::Converged, moves, last_residual, None));
            }
        }
        if spent >= p.max_iterations {
            return Ok(run.finish(sim, Outcome::MaxIterations, moves, last_residual, None));
        }

        let camera = sim.scene().camera(sim.config());
        let d = match pixel_delta_to_machine_delta(correction, &camera) {
            Ok(d) => d,
            Err(_) => return Ok(run.finish(sim, Outcome::MaxIterations, moves, last_residual, None)),
        };
        if sim.interlock_check() {
            return Ok(run.finish(sim, Outcome::EStop, moves, last_residual, None));
        }
        sim.send_gcode("G91");
        let reply = sim.send_gcode(&format!("G1 X{} Y{}", d.dx, d.dy));
        sim.send_gcode("G90");
        if let Reply::Error(_) = reply {
            let outcome = if sim.state().estop_latched {
                Outcome::EStop
            } else {
                Outcome::LimitTruncated
            };
            return Ok(run.finish(sim, outcome, moves, last_residual, None));
        }
        moves += 1;
        spent += 1;
        run.iteration(sim, moves, Some(residual), None);
    }
}
