//! Probe-surface contact and the load cell under the chip platform.

use serde::{Deserialize, Serialize};

use crate::config::MachineConfig;
use crate::machine::{MachineState, Probe};
use crate::scalar::Real;

/// Elastic force of one tip pressed `depth` below the surface; zero above it.
pub fn contact_force<T: Real>(stiffness: T, surface_z: T, tip_z: T) -> T {
    stiffness * (surface_z - tip_z).max(T::zero())
}

/// Linear-elastic contact of both probes with the chip's top surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    pub surface_z: f64,
    /// N/mm per probe, Z probe first.
    pub stiffness: [f64; 2],
}

impl ContactModel {
    pub fn new(surface_z: f64, cfg: &MachineConfig) -> Self {
        Self {
            surface_z,
            stiffness: [cfg.probe_stiffness; 2],
        }
    }

    fn stiffness_of(&self, probe: Probe) -> f64 {
        match probe {
            Probe::Z => self.stiffness[0],
            Probe::Yz => self.stiffness[1],
        }
    }

    pub fn penetration(&self, s: &MachineState, probe: Probe, cfg: &MachineConfig) -> f64 {
        (self.surface_z - s.tip_z(probe, cfg)).max(0.0)
    }

    pub fn in_contact(&self, s: &MachineState, probe: Probe, cfg: &MachineConfig) -> bool {
        self.penetration(s, probe, cfg) > 0.0
    }

    pub fn probe_force(&self, s: &MachineState, probe: Probe, cfg: &MachineConfig) -> f64 {
        contact_force(self.stiffness_of(probe), self.surface_z, s.tip_z(probe, cfg))
    }

    /// Total force on the platform, before quantization.
    pub fn total_force(&self, s: &MachineState, cfg: &MachineConfig) -> f64 {
        self.probe_force(s, Probe::Z, cfg) + self.probe_force(s, Probe::Yz, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceReading {
    pub newtons: f64,
    pub raw_counts: i64,
    pub timestamp: f64,
}

/// Strain-gauge load cell behind a 24-bit amplifier.
///
/// `newtons = raw_counts * gain + offset`, where the offset is captured by
/// [`LoadCell::tare`]. With the default gain (5 N over 2^23 counts) every
/// term is exactly representable, so the relation holds bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCell {
    gain: f64,
    preload: f64,
    max_counts: i64,
    tare_counts: Option<i64>,
}

impl LoadCell {
    pub fn new(cfg: &MachineConfig) -> Self {
        Self {
            gain: cfg.load_cell_gain(),
            preload: cfg.load_cell_preload,
            max_counts: (1i64 << (cfg.load_cell_bits - 1)) - 1,
            tare_counts: None,
        }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn is_tared(&self) -> bool {
        self.tare_counts.is_some()
    }

    /// Offset (N) added to `raw_counts * gain`.
    pub fn offset(&self) -> f64 {
        -(self.tare_counts.unwrap_or(0) as f64) * self.gain
    }

    pub fn raw_counts(&self, force: f64) -> i64 {
        let counts = ((force + self.preload) / self.gain).round() as i64;
        counts.clamp(-self.max_counts - 1, self.max_counts)
    }

    /// Captures the current (contact-free) load as zero.
    pub fn tare(&mut self, force: f64) {
        self.tare_counts = Some(self.raw_counts(force));
    }

    pub fn read(&self, force: f64, timestamp: f64) -> ForceReading {
        let raw_counts = self.raw_counts(force);
        ForceReading {
            newtons: raw_counts as f64 * self.gain + self.offset(),
            raw_counts,
            timestamp,
        }
    }
}

/// One load-cell sample of the current pose.
pub fn sample_force(s: &MachineState, m: &ContactModel, cell: &LoadCell, cfg: &MachineConfig) -> ForceReading {
    cell.read(m.total_force(s, cfg), s.sim_clock)
}
