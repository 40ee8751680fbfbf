//! Two-point resistance measurement and the quantities derived from it.

mod fit;
mod josephson;
mod sweep;
mod timing;

pub use fit::{fit_line, fit_resistance, fit_resistance_points, FitError, LineFit, ResistanceFit};
pub use josephson::{
    critical_current, ic_r_product, Constants, JosephsonError, JunctionParameters, ELEMENTARY_CHARGE,
    REDUCED_PLANCK,
};
pub use sweep::{run_iv_sweep, DutModel, IVSample, IVSweepConfig, SweepError};
pub use timing::{timing_savings, Interval, TimingError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Aluminium-scale superconducting gap (J), used when none is configured.
pub const DEFAULT_GAP_JOULES: f64 = 2.88e-23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Junction(#[from] JosephsonError),
    #[error("sweep interrupted by emergency stop")]
    Interrupted,
    #[error("fitted resistance {0} ohm is not positive")]
    NonPositiveFit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub resistance: f64,
    pub intercept: f64,
    pub rms: f64,
    pub critical_current: f64,
    pub josephson_energy: f64,
    pub samples: Vec<IVSample>,
    /// Sweep start and end on the simulation clock.
    pub started: f64,
    pub elapsed: f64,
}

/// Fits the sweep and derives the junction parameters.
pub fn analyse(samples: Vec<IVSample>, gap_joules: f64, started: f64, elapsed: f64) -> Result<MeasurementResult, MeasurementError> {
    let fit = fit_resistance(&samples)?;
    if !(fit.resistance > 0.0) {
        return Err(MeasurementError::NonPositiveFit(fit.resistance));
    }
    let junction = critical_current(fit.resistance, gap_joules, &Constants::codata())?;
    Ok(MeasurementResult {
        resistance: fit.resistance,
        intercept: fit.intercept,
        rms: fit.rms,
        critical_current: junction.critical_current,
        josephson_energy: junction.josephson_energy,
        samples,
        started,
        elapsed,
    })
}
