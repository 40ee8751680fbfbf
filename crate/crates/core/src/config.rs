//! Machine configuration.
//!
//! Every field has a default so a configuration file only needs to list the
//! values it overrides. Units are millimetres, seconds, newtons and degrees
//! unless a field name says otherwise.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Axis, Camera};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Travel limits of every linear axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisLimits {
    pub x: Span,
    pub y: Span,
    pub z: Span,
    /// Y stage of the YZ probe, offset relative to the carriage.
    pub stage_y: Span,
    /// Z stages of both probes, offset relative to the carriage.
    pub stage_z: Span,
}

impl Default for AxisLimits {
    fn default() -> Self {
        Self {
            x: Span::new(0.0, 220.0),
            y: Span::new(0.0, 220.0),
            z: Span::new(0.0, 100.0),
            stage_y: Span::new(-5.0, 5.0),
            stage_z: Span::new(-6.5, 6.5),
        }
    }
}

impl AxisLimits {
    pub fn carriage(&self, axis: Axis) -> Span {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineConfig {
    /// Correction factor between camera pixels and bed millimetres (mm/px).
    pub pixel_scale: f64,
    /// Camera image is vertically mirrored relative to machine Y.
    pub y_mirrored: bool,
    /// Distance of one jog click.
    pub jog_step: f64,
    /// Carriage speed used for jogs (mm/s).
    pub carriage_speed: f64,
    /// Feed rate assumed when a G-code move has no F word (mm/min).
    pub default_feed_rate: f64,
    /// F words are clamped into this range (mm/min).
    pub feed_rate_limits: Span,
    /// Linear stage travel per motor step (mm).
    pub stage_step_pitch: f64,
    /// Linear and rotation stage step rate (steps/s).
    pub stage_step_rate: f64,
    pub rotation_steps_per_rev: u32,
    /// Steps issued by one rotate click.
    pub rotate_click_steps: i32,
    /// Load-cell sample rate (Hz).
    pub force_sample_rate: f64,
    /// Machine-state telemetry rate (Hz).
    pub state_sample_rate: f64,
    /// Detector latency charged per processed frame (s).
    pub detect_latency: f64,
    /// Range stochastic belt slip is drawn from; upper bound must be < 1.
    pub slip_fraction_range: Span,
    pub axis_limits: AxisLimits,
    /// Contact stiffness of each probe against the chip (N/mm).
    pub probe_stiffness: f64,
    /// Load-cell full scale (N) mapped onto the signed ADC range.
    pub load_cell_full_scale: f64,
    pub load_cell_bits: u32,
    /// Weight of the platform and chip resting on the load cell before taring (N).
    pub load_cell_preload: f64,
    /// Z-probe tip relative to the carriage (bed frame, mm).
    pub z_tip_offset: [f64; 2],
    /// YZ-probe tip relative to the carriage with its Y stage at zero.
    pub yz_tip_offset: [f64; 2],
    /// Visible probe length and width used for detector boxes.
    pub probe_length: f64,
    pub probe_width: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            pixel_scale: 0.005,
            y_mirrored: true,
            jog_step: 0.1,
            carriage_speed: 10.0,
            default_feed_rate: 600.0,
            feed_rate_limits: Span::new(1.0, 12000.0),
            // 0.5 mm lead over 2048 full steps (geared 28BYJ-48).
            stage_step_pitch: 0.5 / 2048.0,
            stage_step_rate: 500.0,
            rotation_steps_per_rev: 2048,
            rotate_click_steps: 32,
            force_sample_rate: 80.0,
            state_sample_rate: 10.0,
            detect_latency: 0.022,
            slip_fraction_range: Span::new(0.0, 0.25),
            axis_limits: AxisLimits::default(),
            probe_stiffness: 0.5,
            load_cell_full_scale: 5.0,
            load_cell_bits: 24,
            load_cell_preload: 0.12,
            z_tip_offset: [0.0, -0.3],
            yz_tip_offset: [0.0, 0.3],
            probe_length: 2.0,
            probe_width: 0.1,
        }
    }
}

impl MachineConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: display,
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let positive = [
            ("pixel_scale", self.pixel_scale),
            ("jog_step", self.jog_step),
            ("carriage_speed", self.carriage_speed),
            ("default_feed_rate", self.default_feed_rate),
            ("stage_step_pitch", self.stage_step_pitch),
            ("stage_step_rate", self.stage_step_rate),
            ("force_sample_rate", self.force_sample_rate),
            ("state_sample_rate", self.state_sample_rate),
            ("probe_stiffness", self.probe_stiffness),
            ("load_cell_full_scale", self.load_cell_full_scale),
            ("probe_length", self.probe_length),
            ("probe_width", self.probe_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be finite and > 0"));
            }
        }
        if !(self.detect_latency.is_finite() && self.detect_latency >= 0.0) {
            return bad("detect_latency must be >= 0");
        }
        let feed = self.feed_rate_limits;
        if !(feed.min > 0.0 && feed.max.is_finite() && feed.contains(self.default_feed_rate)) {
            return bad("feed_rate_limits must be positive, finite and contain default_feed_rate");
        }
        let slip = self.slip_fraction_range;
        if !(slip.min >= 0.0 && slip.min <= slip.max && slip.max < 1.0) {
            return bad("slip_fraction_range must satisfy 0 <= min <= max < 1");
        }
        let l = &self.axis_limits;
        for (name, span) in [("x", l.x), ("y", l.y), ("z", l.z), ("stage_y", l.stage_y), ("stage_z", l.stage_z)] {
            if !(span.min.is_finite() && span.max.is_finite() && span.min < span.max) {
                return bad(&format!("axis_limits.{name}: min must be < max"));
            }
        }
        if self.rotation_steps_per_rev == 0 || self.rotate_click_steps == 0 {
            return bad("rotation step counts must be non-zero");
        }
        if !(2..=32).contains(&self.load_cell_bits) {
            return bad("load_cell_bits must be in 2..=32");
        }
        if !(self.load_cell_preload.is_finite() && self.load_cell_preload >= 0.0) {
            return bad("load_cell_preload must be >= 0");
        }
        Ok(())
    }

    pub fn camera(&self, width: f64, height: f64) -> Camera<f64> {
        Camera {
            pixel_scale: self.pixel_scale,
            y_mirrored: self.y_mirrored,
            width,
            height,
        }
    }

    /// Newtons per ADC count.
    pub fn load_cell_gain(&self) -> f64 {
        self.load_cell_full_scale / 2f64.powi(self.load_cell_bits as i32 - 1)
    }

    pub fn degrees_per_rotation_step(&self) -> f64 {
        360.0 / self.rotation_steps_per_rev as f64
    }

    /// Travel of one lowering increment of `steps` motor steps.
    pub fn increment_mm(&self, steps: u32) -> f64 {
        steps as f64 * self.stage_step_pitch
    }
}
