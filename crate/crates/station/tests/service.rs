use std::time::Duration;

use probestation::api::{Ack, ApiCommand, ApiError};
use probestation::service::{Station, StationOptions};
use probestation::session::RecordBody;
use probestation::telemetry::TelemetryItem;
use probestation_core::autocontrol::{Outcome, ProcedureKind};
use probestation_core::events::{Phase, ProcedureEvent};
use probestation_core::geometry::{Axis, Sign, WorldPoint};
use probestation_core::{SimEvent, SimSetup};

fn aligned_setup() -> SimSetup {
    let mut setup = SimSetup::default();
    setup.scene.jj_center = WorldPoint::new(100.0, 100.0);
    setup
}

fn station(setup: SimSetup) -> Station {
    Station::new(StationOptions::in_memory(setup)).unwrap()
}

fn paced(setup: SimSetup, factor: f64) -> Station {
    Station::new(StationOptions {
        realtime: Some(factor),
        ..StationOptions::in_memory(setup)
    })
    .unwrap()
}

fn events(items: Vec<TelemetryItem>) -> Vec<SimEvent> {
    items
        .into_iter()
        .filter_map(|i| match i {
            TelemetryItem::Event { event, .. } => Some(event),
            TelemetryItem::Gap { .. } => None,
        })
        .collect()
}

#[test]
fn jog_while_idle_moves_carriage() {
    let s = station(SimSetup::default());
    let x0 = s.snapshot().state.carriage.x;
    assert_eq!(s.handle(ApiCommand::Jog { axis: Axis::X, sign: Sign::Plus }), Ok(Ack::Done));
    assert!((s.snapshot().state.carriage.x - x0 - 0.1).abs() < 1e-12);
}

#[test]
fn align_while_sweep_runs_is_busy() {
    let s = paced(aligned_setup(), 40.0);
    assert_eq!(
        s.handle(ApiCommand::RunSweep { params: None }),
        Ok(Ack::Accepted { procedure: ProcedureKind::Sweep })
    );
    assert_eq!(
        s.handle(ApiCommand::AutoAlign { params: None }),
        Err(ApiError::BusyProcedureRunning { running: ProcedureKind::Sweep })
    );
    assert!(matches!(
        s.handle(ApiCommand::Jog { axis: Axis::X, sign: Sign::Plus }),
        Err(ApiError::BusyProcedureRunning { .. })
    ));
    let state = s.handle(ApiCommand::GetState).unwrap();
    assert!(matches!(state, Ack::State(ref st) if st.procedure == Some(ProcedureKind::Sweep)));
    s.handle(ApiCommand::StopAll).unwrap();
    s.wait_idle();
    // Busy refusals are not executed, so they are not logged.
    let cmds: Vec<_> = s.records().into_iter().filter_map(|r| r.body.command().cloned()).collect();
    assert_eq!(cmds.len(), 2);
    assert!(cmds[1].preempting);
}

#[test]
fn stop_during_joint_lowering_halts_within_a_step() {
    let s = paced(aligned_setup(), 20.0);
    let sub = s.subscribe(1 << 20);
    s.handle(ApiCommand::AutoLowerJoint { params: None }).unwrap();
    // Wait until the lowering is under way.
    loop {
        match sub.recv_timeout(Duration::from_secs(5)).expect("telemetry") {
            TelemetryItem::Event {
                event: SimEvent::Procedure(ProcedureEvent { phase: Phase::Started, .. }),
                ..
            } => break,
            _ => continue,
        }
    }
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(s.handle(ApiCommand::StopAll), Ok(Ack::Stopping { preempted: true }));
    let done = s.wait_idle().unwrap();
    assert_eq!(done.result.unwrap().outcome, Outcome::EStop);

    let evs = events(sub.drain());
    let at_stop = evs
        .iter()
        .find_map(|e| match e {
            SimEvent::Interlock { state, .. } => Some(*state),
            _ => None,
        })
        .expect("interlock event");
    let end = s.snapshot().state;
    assert_eq!(end.pose(), at_stop.pose());
    assert!(end.estop_latched);
    assert!(s.handle(ApiCommand::AutoLowerJoint { params: None }).is_ok());
    let again = s.wait_idle().unwrap();
    assert!(again.error.unwrap().contains("emergency stop"));
}

#[test]
fn idle_station_streams_zero_force_at_80_hz() {
    let s = station(SimSetup::default());
    let sub = s.subscribe(10_000);
    s.handle(ApiCommand::Idle { seconds: 1.0 }).unwrap();
    let forces: Vec<_> = events(sub.drain())
        .into_iter()
        .filter_map(|e| match e {
            SimEvent::Force(r) => Some(r),
            _ => None,
        })
        .collect();
    assert_eq!(forces.len(), 80);
    for (k, r) in forces.iter().enumerate() {
        assert_eq!(r.newtons, 0.0);
        assert_eq!(r.timestamp, (k + 1) as f64 / 80.0);
    }
}

#[test]
fn sequential_lowering_force_rises_until_threshold() {
    let s = station(aligned_setup());
    let sub = s.subscribe(1 << 20);
    s.handle(ApiCommand::AutoLowerSequential { params: None }).unwrap();
    let done = s.wait_idle().unwrap();
    assert!(done.result.unwrap().converged());
    let evs = events(sub.drain());
    let first_crossing = evs
        .iter()
        .position(|e| matches!(e, SimEvent::Procedure(ProcedureEvent { phase: Phase::Iteration { .. }, .. })))
        .unwrap();
    let forces: Vec<f64> = evs[..first_crossing]
        .iter()
        .filter_map(|e| match e {
            SimEvent::Force(r) => Some(r.newtons),
            _ => None,
        })
        .collect();
    assert!(forces.len() > 100);
    assert!(forces.windows(2).all(|w| w[1] >= w[0]));
    assert!(*forces.last().unwrap() > 0.05);
}

#[test]
fn stalled_subscriber_sees_gap_but_keeps_lifecycle_events() {
    let s = station(aligned_setup());
    let slow = s.subscribe(16);
    let full = s.subscribe(1 << 20);
    s.handle(ApiCommand::AutoLowerSequential { params: None }).unwrap();
    s.wait_idle();
    let slow_items = slow.drain();
    assert!(slow_items.iter().any(|i| matches!(i, TelemetryItem::Gap { .. })));
    let lifecycle = |evs: Vec<SimEvent>| evs.into_iter().filter(SimEvent::is_lifecycle).collect::<Vec<_>>();
    let kept = lifecycle(events(slow_items));
    assert_eq!(kept, lifecycle(events(full.drain())));
    assert_eq!(kept.len(), 4);
}

#[test]
fn subscribers_see_log_order() {
    let s = station(SimSetup::default());
    let sub = s.subscribe(1 << 20);
    s.handle(ApiCommand::Jog { axis: Axis::Y, sign: Sign::Minus }).unwrap();
    s.handle(ApiCommand::AutoAlign { params: None }).unwrap();
    s.wait_idle();
    let seqs: Vec<u64> = sub
        .drain()
        .into_iter()
        .filter_map(|i| match i {
            TelemetryItem::Event { seq, .. } => Some(seq),
            _ => None,
        })
        .collect();
    let logged: Vec<u64> = s.records().iter().filter(|r| r.body.event().is_some()).map(|r| r.seq).collect();
    assert_eq!(seqs, logged);
}

/// Every pose change in the log is attributed to the command logged before
/// it, and commands that do not move anything cause none.
#[test]
fn write_ahead_instrumentation() {
    let s = station(SimSetup::default());
    let script = vec![
        ApiCommand::Tare,
        ApiCommand::Idle { seconds: 0.3 },
        ApiCommand::Jog { axis: Axis::X, sign: Sign::Plus },
        ApiCommand::SendGcode { line: "G1 Y99.5".into() },
        ApiCommand::SendGcode { line: "M114".into() },
        ApiCommand::AutoAlign { params: None },
        ApiCommand::Idle { seconds: 0.2 },
        ApiCommand::AutoLowerSequential { params: None },
        ApiCommand::RunSweep { params: None },
        ApiCommand::Rotate { sign: Sign::Plus },
        ApiCommand::StopAll,
        ApiCommand::ClearEstop,
    ];
    for c in script {
        s.handle(c).unwrap();
        s.wait_idle();
    }
    let records = s.records();
    assert!(records.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    assert!(matches!(records[0].body, RecordBody::Command(_)));

    // Commands with their position in the log and their execution window on
    // the simulation clock (from their own timestamp to the next command's).
    let cmds: Vec<(usize, f64, ApiCommand)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.body.command().map(|c| (i, r.timestamp, c.command.clone())))
        .collect();
    assert_eq!(cmds.len(), 12);
    let window = |k: usize| (cmds[k].1, cmds.get(k + 1).map_or(f64::INFINITY, |c| c.1));
    let still = |c: &ApiCommand| {
        matches!(
            c,
            ApiCommand::Tare | ApiCommand::Idle { .. } | ApiCommand::ClearEstop | ApiCommand::StopAll
        )
    };

    let mut last: Option<(f64, _)> = None;
    let mut changes = 0;
    for (i, r) in records.iter().enumerate() {
        match r.body.event() {
            Some(SimEvent::State { timestamp, state }) => {
                if let Some((t_prev, pose)) = last {
                    if pose != state.pose() {
                        changes += 1;
                        let caused = (0..cmds.len()).any(|k| {
                            let (from, to) = window(k);
                            cmds[k].0 < i && !still(&cmds[k].2) && from <= *timestamp && to >= t_prev
                        });
                        assert!(caused, "pose change at seq {} has no preceding motion command", r.seq);
                    }
                }
                last = Some((*timestamp, state.pose()));
            }
            Some(SimEvent::Procedure(ProcedureEvent {
                procedure,
                phase: Phase::Started,
                ..
            })) => {
                let (_, _, cmd) = cmds.iter().rev().find(|c| c.0 < i).expect("procedure without command");
                assert_eq!(cmd.procedure(), Some(*procedure));
            }
            Some(_) => assert!(cmds[0].0 < i),
            None => {}
        }
    }
    assert!(changes > 10);
}

#[test]
fn validation_errors_echo_module_errors() {
    let s = station(SimSetup::default());
    let bad = |c| match s.handle(c) {
        Err(ApiError::Invalid { message }) => message,
        other => panic!("{other:?}"),
    };
    assert!(bad(ApiCommand::StageMove { target: probestation_core::stage::StageTarget::ZZ, steps: 0 }).contains("non-zero"));
    let mut p = probestation_core::autocontrol::AlignmentParams::default();
    p.tolerance = -1.0;
    assert!(bad(ApiCommand::AutoAlign { params: Some(p) }).contains("tolerance"));
    let plan = probestation_core::autocontrol::BatchPlan::default();
    assert!(!bad(ApiCommand::RunBatch { plan, params: None }).is_empty());
    assert!(s.records().is_empty());
}

#[test]
fn gcode_errors_are_replies() {
    let s = station(SimSetup::default());
    match s.handle(ApiCommand::SendGcode { line: "G2 X1".into() }).unwrap() {
        Ack::Reply { line } => assert!(line.starts_with("Error:"), "{line}"),
        other => panic!("{other:?}"),
    }
    match s.handle(ApiCommand::SendGcode { line: "M114".into() }).unwrap() {
        Ack::Reply { line } => assert!(line.starts_with("ok X:100"), "{line}"),
        other => panic!("{other:?}"),
    }
}
