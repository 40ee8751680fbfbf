use serde::{Deserialize, Serialize};

use super::{Outcome, ProcedureError, ProcedureKind, ProcedureResult, Run};
use crate::events::SimEvent;
use crate::measurement::{analyse, run_iv_sweep, IVSweepConfig, MeasurementError, MeasurementResult, DEFAULT_GAP_JOULES};
use crate::sim::Simulator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub sweep: IVSweepConfig,
    /// Superconducting gap (J).
    pub gap_joules: f64,
    /// Minimum total force (N) for the probes to count as connected.
    pub contact_threshold: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            sweep: IVSweepConfig::default(),
            gap_joules: DEFAULT_GAP_JOULES,
            contact_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub procedure: ProcedureResult,
    pub measurement: Result<MeasurementResult, MeasurementError>,
}

/// Sources every current point, dwelling on each, then fits the result.
/// Samples are emitted as they are taken.
pub fn run_sweep(sim: &mut Simulator, p: &SweepParams) -> Result<SweepRun, ProcedureError> {
    p.sweep
        .validate()
        .map_err(|e| ProcedureError::InvalidParams(e.to_string()))?;
    let run = Run::start(sim, ProcedureKind::Sweep)?;
    let started = sim.clock();
    let dut = sim.dut(p.contact_threshold);
    let samples = run_iv_sweep(&p.sweep, &dut, sim.dut_rng(), |_| {}).map_err(|e| ProcedureError::InvalidParams(e.to_string()))?;
    let mut taken = Vec::with_capacity(samples.len());
    for sample in samples {
        if sim.interlock_check() {
            let procedure = run.finish(sim, Outcome::EStop, taken.len() as u32, None, None);
            return Ok(SweepRun {
                procedure,
                measurement: Err(MeasurementError::Interrupted),
            });
        }
        sim.idle(p.sweep.dwell);
        sim.emit(SimEvent::SweepSample {
            timestamp: sim.clock(),
            sample,
        });
        taken.push(sample);
    }
    let n = taken.len() as u32;
    let measurement = analyse(taken, p.gap_joules, started, sim.clock() - started);
    let procedure = run.finish(sim, Outcome::Converged, n, None, None);
    Ok(SweepRun { procedure, measurement })
}
