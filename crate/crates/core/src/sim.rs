//! Hardware-in-the-loop simulator: one authoritative [`MachineState`] driven
//! by the printer, the stage controllers and the clock, observed through the
//! load cell and the detector.
//!
//! Force samples (`force_sample_rate`) and state snapshots
//! (`state_sample_rate`) are emitted at fixed instants `k / rate` of the
//! simulation clock, using the pose held at that instant.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::MachineConfig;
use crate::events::{EventSink, NullSink, SimEvent};
use crate::force::{ContactModel, ForceReading, LoadCell};
use crate::gcode::{Reply, SlipError, SlipModel, VirtualPrinter};
use crate::geometry::{Axis, Sign};
use crate::machine::{apply_jog, MachineState, MotionError, Position3, Probe};
use crate::measurement::DutModel;
use crate::stage::{step_motion_with, StageCommand, StageError, StageMotion, StageTarget, StepControl};
use crate::vision::{detect_frame, Detection, SceneDescription};

const EPS: f64 = 1e-9;

/// Everything needed to build a simulator reproducibly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSetup {
    pub config: MachineConfig,
    pub scene: SceneDescription,
    pub slip: SlipModel,
    pub start: Position3,
    /// Seeds the junction voltage noise.
    pub seed: u64,
}

impl Default for SimSetup {
    fn default() -> Self {
        Self {
            config: MachineConfig::default(),
            scene: SceneDescription::default(),
            slip: SlipModel::default(),
            start: Position3::new(100.0, 100.0, 10.0),
            seed: 0,
        }
    }
}

impl SimSetup {
    /// Applies one seed to the detector, slip and junction noise streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.rng_seed = seed;
        self.slip.rng_seed = seed;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Scene(#[from] crate::vision::VisionError),
    #[error(transparent)]
    Slip(#[from] SlipError),
    #[error(transparent)]
    Start(#[from] MotionError),
}

/// Stop request shared with other threads. Tripping it is observed by the
/// simulator at its next interlock check.
#[derive(Debug, Clone, Default)]
pub struct Interlock(Arc<AtomicBool>);

impl Interlock {
    pub fn trip(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_tripped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    fn take(&self) -> bool {
        self.0.swap(false, Ordering::SeqCst)
    }
}

pub struct Simulator {
    cfg: MachineConfig,
    scene: SceneDescription,
    state: MachineState,
    printer: VirtualPrinter,
    cell: LoadCell,
    vision_rng: ChaCha8Rng,
    dut_rng: ChaCha8Rng,
    sink: Box<dyn EventSink>,
    interlock: Interlock,
    checks: u64,
    scheduled_stops: Vec<u64>,
    next_force_tick: u64,
    next_state_tick: u64,
    last_force: ForceReading,
    lowered_once: bool,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("state", &self.state)
            .field("scene", &self.scene)
            .finish_non_exhaustive()
    }
}

impl Simulator {
    /// Builds the simulator and tares the load cell at the starting pose.
    pub fn new(setup: &SimSetup) -> Result<Self, SetupError> {
        setup.config.validate()?;
        setup.scene.validate()?;
        let state = MachineState::at(setup.start);
        state.check_carriage(&setup.config)?;
        let mut sim = Self {
            printer: VirtualPrinter::new(setup.slip, &setup.config)?,
            cell: LoadCell::new(&setup.config),
            vision_rng: ChaCha8Rng::seed_from_u64(setup.scene.rng_seed),
            dut_rng: ChaCha8Rng::seed_from_u64(setup.seed),
            sink: Box::new(NullSink),
            interlock: Interlock::default(),
            checks: 0,
            scheduled_stops: Vec::new(),
            next_force_tick: 0,
            next_state_tick: 0,
            last_force: ForceReading {
                newtons: 0.0,
                raw_counts: 0,
                timestamp: 0.0,
            },
            lowered_once: false,
            cfg: setup.config.clone(),
            scene: setup.scene.clone(),
            state,
        };
        sim.tare();
        Ok(sim)
    }

    pub fn with_sink(mut self, sink: Box<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn set_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sink = sink;
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn scene(&self) -> &SceneDescription {
        &self.scene
    }

    pub fn set_scene(&mut self, scene: SceneDescription) {
        self.scene = scene;
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn clock(&self) -> f64 {
        self.state.sim_clock
    }

    pub fn interlock(&self) -> Interlock {
        self.interlock.clone()
    }

    pub fn interlock_checks(&self) -> u64 {
        self.checks
    }

    /// Replays a stop at a given interlock check instead of waiting for a trip.
    pub fn schedule_stop(&mut self, check: u64) {
        self.scheduled_stops.push(check);
    }

    pub fn lowered_once(&self) -> bool {
        self.lowered_once
    }

    pub fn mark_lowered(&mut self) {
        self.lowered_once = true;
    }

    pub fn last_force(&self) -> ForceReading {
        self.last_force
    }

    pub fn is_tared(&self) -> bool {
        self.cell.is_tared()
    }

    pub fn load_cell(&self) -> &LoadCell {
        &self.cell
    }

    pub fn contact(&self) -> ContactModel {
        ContactModel::new(self.scene.surface_z, &self.cfg)
    }

    pub fn emit(&mut self, event: SimEvent) {
        self.sink.emit(event);
    }

    /// Zeroes the load cell on the current load.
    pub fn tare(&mut self) {
        let f = self.contact().total_force(&self.state, &self.cfg);
        self.cell.tare(f);
        self.sync();
    }

    fn emit_ticks(&mut self, until: f64, inclusive: bool) {
        let fr = self.cfg.force_sample_rate;
        let sr = self.cfg.state_sample_rate;
        let due = |t: f64| if inclusive { t <= until } else { t < until };
        loop {
            let tf = self.next_force_tick as f64 / fr;
            let ts = self.next_state_tick as f64 / sr;
            if due(tf) && tf <= ts {
                let f = self.contact().total_force(&self.state, &self.cfg);
                self.last_force = self.cell.read(f, tf);
                self.next_force_tick += 1;
                self.sink.emit(SimEvent::Force(self.last_force));
            } else if due(ts) {
                self.next_state_tick += 1;
                let mut state = self.state;
                state.sim_clock = ts;
                self.sink.emit(SimEvent::State { timestamp: ts, state });
            } else {
                break;
            }
        }
    }

    /// Emits every sample due up to and including the current clock.
    fn sync(&mut self) {
        self.emit_ticks(self.state.sim_clock, true);
    }

    /// Replaces the pose at the end of an atomic move: samples strictly
    /// before the end time see the old pose.
    fn commit(&mut self, next: MachineState) {
        self.emit_ticks(next.sim_clock, false);
        self.state = next;
        self.sync();
    }

    pub fn idle(&mut self, seconds: f64) {
        self.state.advance_clock(seconds);
        self.sync();
    }

    /// Advances to the next force sample at or after the current instant and
    /// returns it. A sample taken at exactly this instant is reused.
    pub fn wait_fresh_sample(&mut self) -> ForceReading {
        let rate = self.cfg.force_sample_rate;
        let k = (self.state.sim_clock * rate - EPS).ceil().max(0.0) as u64;
        if k >= self.next_force_tick {
            self.state.sim_clock = self.state.sim_clock.max(k as f64 / rate);
            self.sync();
        }
        self.last_force
    }

    /// Counts one interlock check; on a trip (or a scheduled replay stop)
    /// latches the emergency stop and returns true.
    pub fn interlock_check(&mut self) -> bool {
        self.checks += 1;
        let scheduled = self.scheduled_stops.contains(&self.checks);
        if self.interlock.take() || scheduled {
            self.latch_estop();
            self.sink.emit(SimEvent::Interlock {
                timestamp: self.state.sim_clock,
                check: self.checks,
                state: self.state,
            });
            true
        } else {
            false
        }
    }

    pub fn latch_estop(&mut self) {
        self.state.estop_latched = true;
    }

    pub fn clear_estop(&mut self) {
        self.state.estop_latched = false;
    }

    pub fn jog(&mut self, axis: Axis, sign: Sign) -> Result<(), MotionError> {
        let next = apply_jog(&self.state, axis, sign, &self.cfg)?;
        self.commit(next);
        Ok(())
    }

    pub fn send_gcode(&mut self, line: &str) -> Reply {
        let exec = self.printer.handle_line(line, &self.state, &self.cfg);
        self.commit(exec.state);
        exec.reply
    }

    /// Executes a stage command; with `guarded`, the interlock is checked
    /// before every motor step.
    pub fn stage(&mut self, cmd: &StageCommand, guarded: bool) -> Result<StageMotion, StageError> {
        let cfg = self.cfg.clone();
        let start = self.state;
        let mut halted = false;
        let motion = step_motion_with(cmd, &start, &cfg, |st, _| {
            self.state = *st;
            self.sync();
            if guarded && self.interlock_check() {
                halted = true;
                StepControl::Stop
            } else {
                StepControl::Continue
            }
        });
        let motion = match motion {
            Ok(m) => m,
            Err(e) => {
                self.state = start;
                return Err(e);
            }
        };
        self.state = motion.state;
        if halted {
            self.latch_estop();
        }
        self.sync();
        Ok(StageMotion {
            state: self.state,
            ..motion
        })
    }

    pub fn stage_line(&mut self, line: &str) -> String {
        match crate::stage::parse_stage_command(line) {
            Err(e) => format!("ERR {e}"),
            Ok(StageCommand::Status) => crate::stage::status_line(&self.state),
            Ok(cmd) => match self.stage(&cmd, true) {
                Ok(m) if m.truncated => format!("ok TRUNCATED {}", m.executed_steps),
                Ok(_) => "ok".to_string(),
                Err(e) => format!("ERR {e}"),
            },
        }
    }

    /// One click of the rotation buttons.
    pub fn rotate(&mut self, sign: Sign) -> Result<StageMotion, StageError> {
        let steps = sign.factor() as i32 * self.cfg.rotate_click_steps;
        self.stage(
            &StageCommand::Move {
                target: StageTarget::Rotation,
                steps,
            },
            true,
        )
    }

    /// Runs the detector on the current pose and charges its latency.
    pub fn detect(&mut self) -> Vec<Detection<f64>> {
        let dets = detect_frame(&self.scene, &self.state, &self.cfg, &mut self.vision_rng);
        self.state.advance_clock(self.cfg.detect_latency);
        self.sync();
        self.sink.emit(SimEvent::Detections {
            timestamp: self.state.sim_clock,
            detections: dets.clone(),
        });
        dets
    }

    /// Junction circuit as seen through the probes. Closed only when both
    /// tips touch their pads and the last reading exceeds `contact_threshold`.
    pub fn dut(&self, contact_threshold: f64) -> DutModel {
        let contact = self.contact();
        let touching = [Probe::Z, Probe::Yz].into_iter().all(|p| {
            contact.in_contact(&self.state, p, &self.cfg) && self.scene.tip_on_pad(p, &self.state, &self.cfg)
        });
        DutModel {
            true_resistance: self.scene.true_resistance,
            contact_resistance: self.scene.contact_resistance,
            voltage_noise_sigma: self.scene.voltage_noise_sigma,
            open_circuit: !(touching && self.last_force.newtons > contact_threshold),
        }
    }

    pub fn dut_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.dut_rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SharedSink;

    fn sim() -> (Simulator, SharedSink) {
        let sink = SharedSink::default();
        let sim = Simulator::new(&SimSetup::default())
            .unwrap()
            .with_sink(Box::new(sink.clone()));
        (sim, sink)
    }

    #[test]
    fn idle_emits_zero_force_at_sample_rate() {
        let (mut sim, sink) = sim();
        sim.idle(1.0);
        let forces: Vec<_> = sink
            .take()
            .into_iter()
            .filter_map(|e| match e {
                SimEvent::Force(r) => Some(r),
                _ => None,
            })
            .collect();
        // Samples at 1/80 .. 80/80; the t = 0 sample went out when taring.
        assert_eq!(forces.len(), 80);
        assert!(forces.iter().all(|r| r.newtons == 0.0));
        assert_eq!(forces.last().unwrap().timestamp, 1.0);
    }

    #[test]
    fn fresh_sample_waits_for_next_tick() {
        let (mut sim, _) = sim();
        sim.idle(0.001);
        let r = sim.wait_fresh_sample();
        assert_eq!(r.timestamp, 1.0 / 80.0);
        assert_eq!(sim.clock(), 1.0 / 80.0);
        let again = sim.wait_fresh_sample();
        assert_eq!(again, r);
    }

    #[test]
    fn tripped_interlock_stops_within_one_step() {
        let (mut sim, _) = sim();
        let lock = sim.interlock();
        let cmd = StageCommand::Move {
            target: StageTarget::AllZ,
            steps: -4096,
        };
        lock.trip();
        let m = sim.stage(&cmd, true).unwrap();
        assert_eq!(m.executed_steps, 0);
        assert!(sim.state().estop_latched);
        assert!(sim.stage(&cmd, true).is_err());
    }

    #[test]
    fn scheduled_stop_replays_at_same_check() {
        let (mut sim, _) = sim();
        sim.schedule_stop(10);
        let m = sim
            .stage(
                &StageCommand::Move {
                    target: StageTarget::ZZ,
                    steps: -100,
                },
                true,
            )
            .unwrap();
        assert_eq!(m.executed_steps, 9);
        assert!(m.stopped);
    }

    #[test]
    fn gcode_moves_carriage_and_clock() {
        let (mut sim, _) = sim();
        assert_eq!(sim.send_gcode("G91").to_string(), "ok");
        sim.send_gcode("G1 Z1 F600");
        assert_eq!(sim.state().carriage.z, 11.0);
        assert!((sim.clock() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn open_circuit_when_raised() {
        let (sim, _) = sim();
        assert!(sim.dut(0.1).open_circuit);
    }
}
