//! The station: one simulator behind a command dispatcher.
//!
//! Manual commands run inline on the caller's thread. Automated procedures
//! run on a worker thread while the dispatcher refuses every other command
//! with [`ApiError::BusyProcedureRunning`]. `StopAll` bypasses the queue: when
//! anything is executing it only trips the interlock, which the running code
//! observes at its next check. Every command is logged before it executes.
//!
//! Lock order is simulator, then activity, then log.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::thread;
use std::time::{Duration, Instant};

use probestation_core::autocontrol::{
    auto_align, auto_lower_joint, auto_lower_sequential, run_batch, run_sweep, BatchOutcome, BatchParams,
    ProcedureKind, ProcedureResult,
};
use probestation_core::events::{EventSink, Phase, ProcedureEvent};
use probestation_core::sim::{Interlock, SetupError};
use probestation_core::stage::{StageCommand, StageMotion};
use probestation_core::{ForceReading, MachineConfig, MachineState, MeasurementResult, SimEvent, SimSetup, Simulator};

use crate::api::{Ack, ApiCommand, ApiError, StateSnapshot, MAX_IDLE_SECONDS};
use crate::session::{CommandEntry, RecordBody, SessionError, SessionHeader, SessionLog, SessionRecord};
use crate::telemetry::{Subscription, TelemetryBus};

#[derive(Debug, thiserror::Error)]
pub enum StationError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone)]
pub struct StationOptions {
    pub setup: SimSetup,
    /// Session log file; `None` keeps the log in memory.
    pub log_path: Option<PathBuf>,
    /// Also keep file-backed records in memory.
    pub retain_records: bool,
    /// Simulated seconds per wall-clock second; `None` runs unpaced.
    pub realtime: Option<f64>,
}

impl StationOptions {
    pub fn in_memory(setup: SimSetup) -> Self {
        Self {
            setup,
            log_path: None,
            retain_records: true,
            realtime: None,
        }
    }
}

/// What a finished procedure returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub procedure: ProcedureKind,
    pub result: Option<ProcedureResult>,
    /// Why it refused to start, or why the batch was rejected.
    pub error: Option<String>,
    pub measurement: Option<MeasurementResult>,
    pub batch: Option<BatchOutcome>,
}

impl Completion {
    fn new(procedure: ProcedureKind) -> Self {
        Self {
            procedure,
            result: None,
            error: None,
            measurement: None,
            batch: None,
        }
    }
}

#[derive(Debug, Default)]
struct Activity {
    procedure: Option<ProcedureKind>,
    manual: bool,
    last: Option<Completion>,
}

impl Activity {
    fn busy(&self) -> bool {
        self.procedure.is_some() || self.manual
    }
}

#[derive(Debug, Clone, Copy)]
struct Observed {
    state: MachineState,
    force: ForceReading,
}

/// Holds the simulation back to `factor` times wall-clock speed.
struct Pacer {
    factor: f64,
    origin: Option<(Instant, f64)>,
}

impl Pacer {
    fn pace(&mut self, t: f64) {
        let now = Instant::now();
        let (w0, t0) = *self.origin.get_or_insert((now, t));
        let target = w0 + Duration::from_secs_f64(((t - t0) / self.factor).max(0.0));
        if target > now {
            thread::sleep(target - now);
        } else if now - target > Duration::from_millis(50) {
            // Idle gap or a slow consumer; restart from here instead of bursting.
            self.origin = Some((now, t));
        }
    }
}

/// Routes simulator events into the session log and then to subscribers,
/// under one lock so every subscriber sees log order.
struct StationSink {
    log: Arc<Mutex<SessionLog>>,
    bus: Arc<TelemetryBus>,
    observed: Arc<Mutex<Observed>>,
    pacer: Option<Pacer>,
}

impl EventSink for StationSink {
    fn emit(&mut self, event: SimEvent) {
        if let (Some(p), SimEvent::Force(r)) = (self.pacer.as_mut(), &event) {
            p.pace(r.timestamp);
        }
        {
            let mut o = relock(&self.observed);
            match &event {
                SimEvent::Force(r) => o.force = *r,
                SimEvent::State { state, .. } | SimEvent::Interlock { state, .. } => o.state = *state,
                _ => {}
            }
        }
        let mut log = relock(&self.log);
        let seq = log.append(event.timestamp(), RecordBody::from_event(event.clone()));
        self.bus.publish(seq, &event);
    }
}

fn relock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

struct Inner {
    sim: Mutex<Simulator>,
    log: Arc<Mutex<SessionLog>>,
    bus: Arc<TelemetryBus>,
    observed: Arc<Mutex<Observed>>,
    interlock: Interlock,
    config: MachineConfig,
    activity: Mutex<Activity>,
    changed: Condvar,
}

#[derive(Clone)]
pub struct Station {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Station {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Station").finish_non_exhaustive()
    }
}

impl Station {
    pub fn new(opts: StationOptions) -> Result<Self, StationError> {
        let mut sim = Simulator::new(&opts.setup)?;
        let header = SessionHeader::new(&opts.setup);
        let log = match &opts.log_path {
            Some(p) => SessionLog::create(p, &header, opts.retain_records)?,
            None => SessionLog::in_memory(),
        };
        let log = Arc::new(Mutex::new(log));
        let bus = Arc::new(TelemetryBus::default());
        let observed = Arc::new(Mutex::new(Observed {
            state: *sim.state(),
            force: sim.last_force(),
        }));
        sim.set_sink(Box::new(StationSink {
            log: log.clone(),
            bus: bus.clone(),
            observed: observed.clone(),
            pacer: opts
                .realtime
                .filter(|f| *f > 0.0 && f.is_finite())
                .map(|factor| Pacer { factor, origin: None }),
        }));
        Ok(Self {
            inner: Arc::new(Inner {
                interlock: sim.interlock(),
                config: sim.config().clone(),
                sim: Mutex::new(sim),
                log,
                bus,
                observed,
                activity: Mutex::new(Activity::default()),
                changed: Condvar::new(),
            }),
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.inner.config
    }

    pub fn subscribe(&self, capacity: usize) -> Subscription {
        self.inner.bus.subscribe(capacity)
    }

    pub fn bus(&self) -> &TelemetryBus {
        &self.inner.bus
    }

    /// Validates, logs and executes one command. Procedures return
    /// [`Ack::Accepted`] at once and finish on a worker thread.
    pub fn handle(&self, cmd: ApiCommand) -> Result<Ack, ApiError> {
        match cmd {
            ApiCommand::StopAll => return Ok(self.stop_all()),
            ApiCommand::GetState => return Ok(Ack::State(self.snapshot())),
            _ => {}
        }
        validate(&cmd, &self.inner.config)?;
        let kind = cmd.procedure();
        {
            let mut act = relock(&self.inner.activity);
            loop {
                if let Some(running) = act.procedure {
                    return Err(ApiError::BusyProcedureRunning { running });
                }
                if !act.manual {
                    break;
                }
                act = self.inner.changed.wait(act).unwrap_or_else(|p| p.into_inner());
            }
            match kind {
                Some(k) => act.procedure = Some(k),
                None => act.manual = true,
            }
        }

        let mut sim = relock(&self.inner.sim);
        self.inner.log_command(sim.clock(), &cmd, false);
        if let Some(kind) = kind {
            drop(sim);
            let inner = self.inner.clone();
            thread::spawn(move || inner.run_procedure(kind, cmd));
            return Ok(Ack::Accepted { procedure: kind });
        }
        let result = catch_unwind(AssertUnwindSafe(|| execute_manual(&mut sim, &cmd)))
            .unwrap_or_else(|_| Err(ApiError::Internal { message: "command panicked".into() }));
        self.inner.finish(&mut sim, None);
        result
    }

    fn stop_all(&self) -> Ack {
        {
            let mut act = relock(&self.inner.activity);
            if act.busy() {
                self.inner.interlock.trip();
                let t = relock(&self.inner.log).last_timestamp();
                self.inner.log_command(t, &ApiCommand::StopAll, true);
                return Ack::Stopping { preempted: true };
            }
            act.manual = true;
        }
        let mut sim = relock(&self.inner.sim);
        self.inner.log_command(sim.clock(), &ApiCommand::StopAll, false);
        sim.latch_estop();
        self.inner.finish(&mut sim, None);
        Ack::Stopping { preempted: false }
    }

    /// Exact state when the simulator is free, else the latest telemetry.
    pub fn snapshot(&self) -> StateSnapshot {
        let procedure = relock(&self.inner.activity).procedure;
        if let Ok(sim) = self.inner.sim.try_lock() {
            return StateSnapshot {
                state: *sim.state(),
                force: sim.last_force(),
                procedure,
                tared: sim.is_tared(),
            };
        }
        let o = *relock(&self.inner.observed);
        StateSnapshot {
            state: o.state,
            force: o.force,
            procedure,
            tared: true,
        }
    }

    pub fn is_idle(&self) -> bool {
        !relock(&self.inner.activity).busy()
    }

    /// Blocks until nothing is executing; returns the latest procedure
    /// completion not yet collected.
    pub fn wait_idle(&self) -> Option<Completion> {
        let act = relock(&self.inner.activity);
        let mut act = self
            .inner
            .changed
            .wait_while(act, |a| a.busy())
            .unwrap_or_else(|p| p.into_inner());
        act.last.take()
    }

    /// Direct simulator access while idle, for setup that is not a command
    /// (replay scheduling, tests).
    pub fn with_sim<R>(&self, f: impl FnOnce(&mut Simulator) -> R) -> R {
        self.wait_idle();
        f(&mut relock(&self.inner.sim))
    }

    /// Records retained in memory so far.
    pub fn records(&self) -> Vec<SessionRecord> {
        relock(&self.inner.log).records().to_vec()
    }

    pub fn flush_log(&self) -> Result<(), SessionError> {
        relock(&self.inner.log).flush()
    }

    pub fn log_failure(&self) -> Option<String> {
        relock(&self.inner.log).failure().map(str::to_string)
    }

    /// Advances simulated time by `period` for every `period` of wall time
    /// while the station is idle. Stops when the station is dropped.
    pub fn start_clock(&self, period: Duration) -> thread::JoinHandle<()> {
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        thread::spawn(move || loop {
            thread::sleep(period);
            let Some(inner) = weak.upgrade() else { break };
            let station = Station { inner };
            if station.is_idle() {
                let _ = station.handle(ApiCommand::Idle {
                    seconds: period.as_secs_f64(),
                });
            }
        })
    }
}

impl Inner {
    fn log_command(&self, timestamp: f64, cmd: &ApiCommand, preempting: bool) {
        relock(&self.log).append(
            timestamp,
            RecordBody::Command(CommandEntry {
                command: cmd.clone(),
                preempting,
            }),
        );
    }

    /// Observes any stop that arrived while the command ran, then marks the
    /// station idle. Holding the activity lock makes the two atomic with
    /// respect to `stop_all`.
    fn finish(&self, sim: &mut Simulator, completion: Option<Completion>) {
        let mut act = relock(&self.activity);
        sim.interlock_check();
        act.procedure = None;
        act.manual = false;
        if completion.is_some() {
            act.last = completion;
        }
        self.changed.notify_all();
    }

    fn run_procedure(&self, kind: ProcedureKind, cmd: ApiCommand) {
        let mut sim = relock(&self.sim);
        let completion = catch_unwind(AssertUnwindSafe(|| execute_procedure(&mut sim, kind, cmd))).unwrap_or_else(|_| {
            let mut c = Completion::new(kind);
            c.error = Some("procedure panicked".into());
            c
        });
        if let Some(reason) = &completion.error {
            if completion.result.is_none() && completion.batch.is_none() {
                let timestamp = sim.clock();
                sim.emit(SimEvent::Procedure(ProcedureEvent {
                    timestamp,
                    procedure: kind,
                    phase: Phase::Rejected { reason: reason.clone() },
                }));
            }
        }
        self.finish(&mut sim, Some(completion));
    }
}

fn validate(cmd: &ApiCommand, cfg: &MachineConfig) -> Result<(), ApiError> {
    let inner = |r: Result<(), _>| r.map_err(|e: probestation_core::autocontrol::ProcedureError| ApiError::invalid(e));
    match cmd {
        ApiCommand::StageMove { steps: 0, .. } => Err(ApiError::invalid("step count must be non-zero")),
        ApiCommand::SendGcode { line } if line.contains(['\n', '\r']) => {
            Err(ApiError::invalid("G-code must be a single line"))
        }
        ApiCommand::Idle { seconds } if !(seconds.is_finite() && (0.0..=MAX_IDLE_SECONDS).contains(seconds)) => {
            Err(ApiError::invalid(format!("idle must lie in [0, {MAX_IDLE_SECONDS}] s")))
        }
        ApiCommand::AutoAlign { params: Some(p) } => inner(p.validate()),
        ApiCommand::AutoLowerSequential { params: Some(p) } | ApiCommand::AutoLowerJoint { params: Some(p) } => {
            inner(p.validate())
        }
        ApiCommand::RunSweep { params: Some(p) } => p.sweep.validate().map_err(ApiError::invalid),
        ApiCommand::RunBatch { plan, params } => {
            plan.validate(cfg).map_err(ApiError::invalid)?;
            if let Some(p) = params {
                inner(p.align.validate())?;
                inner(p.lowering.validate())?;
                p.sweep.sweep.validate().map_err(ApiError::invalid)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn stage_ack(m: StageMotion) -> Ack {
    Ack::Stage {
        executed_steps: m.executed_steps,
        truncated: m.truncated,
        stopped: m.stopped,
    }
}

fn execute_manual(sim: &mut Simulator, cmd: &ApiCommand) -> Result<Ack, ApiError> {
    match cmd {
        ApiCommand::Jog { axis, sign } => sim.jog(*axis, *sign).map(|_| Ack::Done).map_err(ApiError::refused),
        ApiCommand::SendGcode { line } => Ok(Ack::Reply {
            line: sim.send_gcode(line).to_string(),
        }),
        ApiCommand::StageMove { target, steps } => sim
            .stage(
                &StageCommand::Move {
                    target: *target,
                    steps: *steps,
                },
                true,
            )
            .map(stage_ack)
            .map_err(ApiError::refused),
        ApiCommand::Rotate { sign } => sim.rotate(*sign).map(stage_ack).map_err(ApiError::refused),
        ApiCommand::Tare => {
            sim.tare();
            Ok(Ack::Done)
        }
        ApiCommand::Idle { seconds } => {
            sim.idle(*seconds);
            Ok(Ack::Done)
        }
        ApiCommand::ClearEstop => {
            sim.clear_estop();
            Ok(Ack::Done)
        }
        other => Err(ApiError::Internal {
            message: format!("{other:?} is not a manual command"),
        }),
    }
}

fn execute_procedure(sim: &mut Simulator, kind: ProcedureKind, cmd: ApiCommand) -> Completion {
    let mut c = Completion::new(kind);
    let settle = |c: &mut Completion, r: Result<ProcedureResult, _>| match r {
        Ok(r) => c.result = Some(r),
        Err(e) => c.error = Some(ToString::to_string(&e)),
    };
    match cmd {
        ApiCommand::AutoAlign { params } => settle(&mut c, auto_align(sim, &params.unwrap_or_default())),
        ApiCommand::AutoLowerSequential { params } => {
            settle(&mut c, auto_lower_sequential(sim, &params.unwrap_or_default()))
        }
        ApiCommand::AutoLowerJoint { params } => settle(&mut c, auto_lower_joint(sim, &params.unwrap_or_default())),
        ApiCommand::RunSweep { params } => match run_sweep(sim, &params.unwrap_or_default()) {
            Ok(run) => {
                c.result = Some(run.procedure);
                match run.measurement {
                    Ok(result) => {
                        sim.emit(SimEvent::Measurement {
                            timestamp: sim.clock(),
                            slot: None,
                            result: result.clone(),
                        });
                        c.measurement = Some(result);
                    }
                    Err(e) => c.error = Some(e.to_string()),
                }
            }
            Err(e) => c.error = Some(e.to_string()),
        },
        ApiCommand::RunBatch { plan, params } => {
            match run_batch(sim, &plan, &params.unwrap_or_else(BatchParams::standard)) {
                Ok(outcome) => c.batch = Some(outcome),
                Err(e) => c.error = Some(e.to_string()),
            }
        }
        other => c.error = Some(format!("{other:?} is not a procedure")),
    }
    c
}
