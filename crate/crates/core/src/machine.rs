//! Authoritative kinematic state of the station.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MachineConfig;
use crate::geometry::{Axis, Sign, WorldPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("emergency stop latched")]
    EStopLatched,
    #[error("{axis:?} target {target:.4} mm outside [{min}, {max}]")]
    LimitBreach {
        axis: Axis,
        target: f64,
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn set(&mut self, axis: Axis, value: f64) {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
    }

    pub fn xy(&self) -> WorldPoint<f64> {
        WorldPoint::new(self.x, self.y)
    }
}

/// Stepper-driven stage position, kept as an integer step count so that
/// forward and reverse moves cancel exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StagePosition(pub i64);

impl StagePosition {
    pub fn mm(self, cfg: &MachineConfig) -> f64 {
        self.0 as f64 * cfg.stage_step_pitch
    }

    pub fn degrees(self, cfg: &MachineConfig) -> f64 {
        self.0 as f64 * cfg.degrees_per_rotation_step()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct YzStage {
    pub y: StagePosition,
    pub z: StagePosition,
}

/// Which probe a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Z,
    Yz,
}

/// Carriage pose (Y is the carriage position relative to the moving bed),
/// probe stage offsets relative to the carriage, rotation stage and clock.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub carriage: Position3,
    pub yz_probe: YzStage,
    pub z_probe: StagePosition,
    pub rotation_stage: StagePosition,
    pub sim_clock: f64,
    pub estop_latched: bool,
}

impl MachineState {
    pub fn at(carriage: Position3) -> Self {
        Self {
            carriage,
            ..Self::default()
        }
    }

    /// Position fields only; two states with equal poses compare equal here
    /// regardless of clock.
    pub fn pose(&self) -> (Position3, YzStage, StagePosition, StagePosition) {
        (self.carriage, self.yz_probe, self.z_probe, self.rotation_stage)
    }

    pub fn tip_xy(&self, probe: Probe, cfg: &MachineConfig) -> WorldPoint<f64> {
        let c = self.carriage;
        match probe {
            Probe::Z => WorldPoint::new(c.x + cfg.z_tip_offset[0], c.y + cfg.z_tip_offset[1]),
            Probe::Yz => WorldPoint::new(
                c.x + cfg.yz_tip_offset[0],
                c.y + cfg.yz_tip_offset[1] + self.yz_probe.y.mm(cfg),
            ),
        }
    }

    /// Height of a probe tip in the machine frame.
    pub fn tip_z(&self, probe: Probe, cfg: &MachineConfig) -> f64 {
        let offset = match probe {
            Probe::Z => self.z_probe,
            Probe::Yz => self.yz_probe.z,
        };
        self.carriage.z + offset.mm(cfg)
    }

    pub fn rotation_degrees(&self, cfg: &MachineConfig) -> f64 {
        self.rotation_stage.degrees(cfg)
    }

    /// Advances the clock; negative or non-finite durations are ignored so
    /// the clock never runs backwards.
    pub fn advance_clock(&mut self, dt: f64) {
        if dt.is_finite() && dt > 0.0 {
            self.sim_clock += dt;
        }
    }

    pub fn check_carriage(&self, cfg: &MachineConfig) -> Result<(), MotionError> {
        for axis in Axis::ALL {
            let span = cfg.axis_limits.carriage(axis);
            let v = self.carriage.get(axis);
            if !span.contains(v) {
                return Err(MotionError::LimitBreach {
                    axis,
                    target: v,
                    min: span.min,
                    max: span.max,
                });
            }
        }
        Ok(())
    }
}

/// One jog click: moves the carriage by exactly `jog_step` along `axis`.
pub fn apply_jog(
    s: &MachineState,
    axis: Axis,
    sign: Sign,
    cfg: &MachineConfig,
) -> Result<MachineState, MotionError> {
    if s.estop_latched {
        return Err(MotionError::EStopLatched);
    }
    let span = cfg.axis_limits.carriage(axis);
    let target = s.carriage.get(axis) + sign.apply(cfg.jog_step);
    if !span.contains(target) {
        return Err(MotionError::LimitBreach {
            axis,
            target,
            min: span.min,
            max: span.max,
        });
    }
    let mut next = *s;
    next.carriage.set(axis, target);
    next.advance_clock(cfg.jog_step / cfg.carriage_speed);
    Ok(next)
}
