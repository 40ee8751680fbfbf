//! Compliance-limited current-sourced IV sweep against a simulated junction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("sweep needs at least two current points")]
    TooFewPoints,
    #[error("current point {0} A exceeds the {1} A compliance")]
    CurrentOverLimit(f64, f64),
    #[error("compliance limits must be positive and finite")]
    BadLimits,
    #[error("dwell must be >= 0")]
    BadDwell,
}

/// Two-point resistance network seen by the source-measure unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutModel {
    pub true_resistance: f64,
    /// Per probe; two probes are in series with the junction.
    pub contact_resistance: f64,
    pub voltage_noise_sigma: f64,
    /// A probe is lifted or off its pad.
    pub open_circuit: bool,
}

impl DutModel {
    pub fn closed(true_resistance: f64, contact_resistance: f64) -> Self {
        Self {
            true_resistance,
            contact_resistance,
            voltage_noise_sigma: 0.0,
            open_circuit: false,
        }
    }

    pub fn network_resistance(&self) -> f64 {
        if self.open_circuit {
            f64::INFINITY
        } else {
            self.true_resistance + 2.0 * self.contact_resistance
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVSweepConfig {
    /// Sourced currents (A), in sweep order.
    pub current_points: Vec<f64>,
    /// Voltage compliance (V).
    pub v_max: f64,
    /// Current compliance (A).
    pub i_max: f64,
    /// Settling time per point (s).
    pub dwell: f64,
}

impl Default for IVSweepConfig {
    /// 21 points from -5 uA to +5 uA, 10 mV / 10 uA compliance, 20 s total.
    fn default() -> Self {
        Self {
            current_points: (0..21).map(|k| (k as f64 - 10.0) * 0.5 / 1e6).collect(),
            v_max: 0.01,
            i_max: 1e-5,
            dwell: 20.0 / 21.0,
        }
    }
}

impl IVSweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.current_points.len() < 2 {
            return Err(SweepError::TooFewPoints);
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite() && self.i_max > 0.0 && self.i_max.is_finite()) {
            return Err(SweepError::BadLimits);
        }
        if !(self.dwell >= 0.0 && self.dwell.is_finite()) {
            return Err(SweepError::BadDwell);
        }
        if let Some(&i) = self.current_points.iter().find(|i| !(i.abs() <= self.i_max)) {
            return Err(SweepError::CurrentOverLimit(i, self.i_max));
        }
        Ok(())
    }

    pub fn total_time(&self) -> f64 {
        self.dwell * self.current_points.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IVSample {
    pub current: f64,
    pub voltage: f64,
    /// The source hit voltage compliance; `voltage` is the compliance value.
    pub clamped: bool,
}

/// Runs the sweep. `after_point` is called once per point, after its dwell,
/// in sweep order.
pub fn run_iv_sweep<R: Rng + ?Sized>(
    cfg: &IVSweepConfig,
    dut: &DutModel,
    rng: &mut R,
    mut after_point: impl FnMut(&IVSample),
) -> Result<Vec<IVSample>, SweepError> {
    cfg.validate()?;
    let r = dut.network_resistance();
    let mut samples = Vec::with_capacity(cfg.current_points.len());
    for &current in &cfg.current_points {
        let noise: f64 = rng.sample(StandardNormal);
        let sign = if current < 0.0 { -1.0 } else { 1.0 };
        let clamp = IVSample {
            current,
            voltage: sign * cfg.v_max,
            clamped: true,
        };
        let sample = if dut.open_circuit {
            clamp
        } else {
            let predicted = current * r;
            if predicted.abs() > cfg.v_max {
                clamp
            } else {
                let voltage = predicted + noise * dut.voltage_noise_sigma;
                if voltage.abs() > cfg.v_max {
                    IVSample {
                        voltage: voltage.signum() * cfg.v_max,
                        ..clamp
                    }
                } else {
                    IVSample {
                        current,
                        voltage,
                        clamped: false,
                    }
                }
            }
        };
        after_point(&sample);
        samples.push(sample);
    }
    Ok(samples)
}
