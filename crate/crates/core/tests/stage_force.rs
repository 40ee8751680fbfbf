use probestation_core::config::MachineConfig;
use probestation_core::force::{sample_force, ContactModel, LoadCell};
use probestation_core::machine::{MachineState, Position3, Probe, StagePosition};
use probestation_core::stage::{
    parse_stage_command, step_motion, step_motion_with, StageCommand, StageParseError, StageTarget, StepControl,
};
use proptest::prelude::*;

fn stage_command() -> impl Strategy<Value = StageCommand> {
    prop_oneof![
        (prop::sample::select(StageTarget::ALL.to_vec()), any::<i32>().prop_filter("non-zero", |n| *n != 0))
            .prop_map(|(target, steps)| StageCommand::Move { target, steps }),
        Just(StageCommand::Stop),
        Just(StageCommand::Status),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn stage_round_trip(cmd in stage_command()) {
        prop_assert_eq!(parse_stage_command(&cmd.to_string()), Ok(cmd));
    }

    #[test]
    fn stage_parser_is_total(line in "\\PC{0,30}") {
        let _ = parse_stage_command(&line);
    }
}

#[test]
fn stage_golden_negatives() {
    use StageParseError::*;
    let cases = [
        ("", Empty),
        ("JUMP", UnknownVerb("JUMP".into())),
        ("MOVE XY 5", UnknownTarget("XY".into())),
        ("MOVE YZ_Z", MissingArgument("steps")),
        ("MOVE", MissingArgument("target")),
        ("MOVE YZ_Z 0", ZeroSteps),
        ("MOVE YZ_Z -0", ZeroSteps),
        ("MOVE YZ_Z 1.5", InvalidSteps("1.5".into())),
        ("MOVE YZ_Z 99999999999", StepsOverflow("99999999999".into())),
        ("STOP now", UnexpectedToken("now".into())),
    ];
    for (line, err) in cases {
        assert_eq!(parse_stage_command(line), Err(err), "{line:?}");
    }
    assert_eq!(
        parse_stage_command("MOVE YZ_Z -512"),
        Ok(StageCommand::Move {
            target: StageTarget::YzZ,
            steps: -512
        })
    );
}

#[test]
fn pitch_and_rotation_examples() {
    let cfg = MachineConfig {
        stage_step_pitch: 0.001,
        ..MachineConfig::default()
    };
    let s = MachineState::default();
    let m = step_motion(&StageCommand::Move { target: StageTarget::ZZ, steps: -100 }, &s, &cfg).unwrap();
    assert!((m.state.z_probe.mm(&cfg) + 0.1).abs() < 1e-12);
    assert!((m.state.sim_clock - 100.0 / cfg.stage_step_rate).abs() < 1e-12);
    let m = step_motion(&StageCommand::Move { target: StageTarget::Rotation, steps: 512 }, &s, &cfg).unwrap();
    assert_eq!(m.state.rotation_degrees(&cfg), 90.0);
}

#[test]
fn stop_during_long_move_allows_at_most_one_step() {
    let cfg = MachineConfig::default();
    let s = MachineState::default();
    let cmd = StageCommand::Move { target: StageTarget::AllZ, steps: -4096 };
    for stop_at in [0u32, 1, 17, 2048, 4095] {
        // The stop request arrives after `stop_at` steps; the hook sees it before the next one.
        let mut requested = false;
        let m = step_motion_with(&cmd, &s, &cfg, |_, done| {
            if done == stop_at {
                requested = true;
            }
            if requested { StepControl::Stop } else { StepControl::Continue }
        })
        .unwrap();
        assert!(m.executed_steps <= stop_at + 1);
        assert!(m.stopped);
    }
}

proptest! {
    #[test]
    fn stage_moves_reverse_exactly(target in prop::sample::select(StageTarget::ALL.to_vec()), n in 1i32..3000, start in -5000i64..5000) {
        let cfg = MachineConfig::default();
        let mut s = MachineState::default();
        s.yz_probe.y = StagePosition(start.clamp(-20000, 20000));
        let fwd = step_motion(&StageCommand::Move { target, steps: n }, &s, &cfg).unwrap();
        prop_assume!(!fwd.truncated);
        let back = step_motion(&StageCommand::Move { target, steps: -n }, &fwd.state, &cfg).unwrap();
        prop_assert!(!back.truncated);
        prop_assert_eq!(back.state.pose(), s.pose());
        prop_assert_eq!(back.state.z_probe.mm(&cfg).to_bits(), s.z_probe.mm(&cfg).to_bits());
    }

    #[test]
    fn force_is_monotone_in_each_penetration(depths in prop::collection::vec(0u32..4000, 2..30), other in -2000i64..2000) {
        let cfg = MachineConfig::default();
        let model = ContactModel::new(9.5, &cfg);
        let mut cell = LoadCell::new(&cfg);
        cell.tare(0.0);
        let mut sorted = depths.clone();
        sorted.sort_unstable();
        for probe in [Probe::Z, Probe::Yz] {
            let mut last = f64::NEG_INFINITY;
            for &d in &sorted {
                let mut s = MachineState::at(Position3::new(100.0, 100.0, 10.0));
                let (moving, fixed) = match probe {
                    Probe::Z => (&mut s.z_probe, other),
                    Probe::Yz => (&mut s.yz_probe.z, other),
                };
                *moving = StagePosition(-(d as i64) - 2048);
                match probe {
                    Probe::Z => s.yz_probe.z = StagePosition(fixed),
                    Probe::Yz => s.z_probe = StagePosition(fixed),
                }
                let r = sample_force(&s, &model, &cell, &cfg);
                prop_assert!(r.newtons >= last);
                prop_assert!(r.newtons >= 0.0);
                let exact = model.total_force(&s, &cfg);
                prop_assert!((r.newtons - exact).abs() <= cell.gain());
                prop_assert_eq!(r.newtons, r.raw_counts as f64 * cell.gain() + cell.offset());
                last = r.newtons;
            }
        }
    }

    #[test]
    fn zero_force_above_surface(z in -26000i64..0, yz in -26000i64..0, clearance in 1e-6..5.0f64) {
        let cfg = MachineConfig::default();
        let mut s = MachineState::at(Position3::new(100.0, 100.0, 10.0));
        s.z_probe = StagePosition(z);
        s.yz_probe.z = StagePosition(yz);
        let lowest = s.tip_z(Probe::Z, &cfg).min(s.tip_z(Probe::Yz, &cfg));
        let model = ContactModel::new(lowest - clearance, &cfg);
        let mut cell = LoadCell::new(&cfg);
        cell.tare(0.0);
        prop_assert_eq!(sample_force(&s, &model, &cell, &cfg).newtons, 0.0);
    }
}
