//! Pre-alignment assists: probe spacing and pad-axis rotation.

use super::{Outcome, ProcedureError, ProcedureKind, ProcedureResult, Run};
use crate::sim::Simulator;
use crate::stage::{StageCommand, StageTarget};
use crate::vision::{locate_targets, Label};

fn spacing_error(sim: &mut Simulator) -> Option<f64> {
    let dets = sim.detect();
    let scale = sim.config().pixel_scale;
    let t = locate_targets(&dets, sim.scene().pad_span, scale).ok()?;
    Some(sim.scene().pad_span - t.yz_tip.distance(t.z_tip) * scale)
}

/// Moves the YZ probe along Y so the tip spacing matches the pad span.
pub fn adjust_probe_spacing(sim: &mut Simulator) -> Result<ProcedureResult, ProcedureError> {
    let run = Run::start(sim, ProcedureKind::AdjustSpacing)?;
    let Some(err) = spacing_error(sim) else {
        return Ok(run.finish(sim, Outcome::MaxIterations, 0, None, None));
    };
    let steps = (err / sim.config().stage_step_pitch).round();
    if steps.abs() < 1.0 {
        return Ok(run.finish(sim, Outcome::Converged, 0, Some(err.abs()), None));
    }
    let cmd = StageCommand::Move {
        target: StageTarget::YzY,
        steps: steps.clamp(i32::MIN as f64, i32::MAX as f64) as i32,
    };
    let outcome = match sim.stage(&cmd, true) {
        Ok(m) if m.stopped => Outcome::EStop,
        Ok(m) if m.truncated => Outcome::LimitTruncated,
        Ok(_) => Outcome::Converged,
        Err(_) => Outcome::EStop,
    };
    let residual = spacing_error(sim).map(f64::abs);
    Ok(run.finish(sim, outcome, 1, residual, None))
}

/// Unsigned pad-axis angle (degrees) recovered from the junction box aspect.
fn junction_angle(sim: &mut Simulator) -> Option<f64> {
    let dets = sim.detect();
    let jj = dets.iter().find(|d| d.label == Label::Junction)?;
    let scale = sim.config().pixel_scale;
    let (hx, hy) = (jj.bbox.width() * scale / 2.0, jj.bbox.height() * scale / 2.0);
    let scene = sim.scene();
    let l = (scene.pad_span + scene.pad_size) / 2.0;
    let w = scene.pad_size / 2.0;
    // Half-extents of a rotated rectangle: hx = l|sin| + w|cos|, hy = l|cos| + w|sin|.
    let det = l * l - w * w;
    let sin = ((l * hx - w * hy) / det).max(0.0);
    let cos = ((l * hy - w * hx) / det).max(0.0);
    Some(sin.atan2(cos).to_degrees())
}

/// Rotates the chip so the pad axis lines up with the inter-probe axis.
/// The box aspect gives the angle but not its sign, so one direction is
/// tried and reversed if the angle grows.
pub fn adjust_rotation(sim: &mut Simulator) -> Result<ProcedureResult, ProcedureError> {
    let run = Run::start(sim, ProcedureKind::AdjustRotation)?;
    let Some(angle) = junction_angle(sim) else {
        return Ok(run.finish(sim, Outcome::MaxIterations, 0, None, None));
    };
    let per_step = sim.config().degrees_per_rotation_step();
    let steps = (angle / per_step).round() as i32;
    if steps == 0 {
        return Ok(run.finish(sim, Outcome::Converged, 0, Some(angle), None));
    }
    let mut moves = 0;
    let mut turn = |sim: &mut Simulator, steps: i32| -> Option<Outcome> {
        moves += 1;
        let cmd = StageCommand::Move {
            target: StageTarget::Rotation,
            steps,
        };
        match sim.stage(&cmd, true) {
            Ok(m) if m.stopped => Some(Outcome::EStop),
            Ok(_) => None,
            Err(_) => Some(Outcome::EStop),
        }
    };
    if let Some(o) = turn(sim, -steps) {
        return Ok(run.finish(sim, o, moves, None, None));
    }
    let mut residual = junction_angle(sim);
    if residual.is_some_and(|r| r > angle) {
        if let Some(o) = turn(sim, 2 * steps) {
            return Ok(run.finish(sim, o, moves, None, None));
        }
        residual = junction_angle(sim);
    }
    let outcome = if residual.is_some_and(|r| r <= per_step) {
        Outcome::Converged
    } else {
        Outcome::MaxIterations
    };
    Ok(run.finish(sim, outcome, moves, residual, None))
}
