use probestation_core::config::MachineConfig;
use probestation_core::geometry::{
    machine_delta_to_pixel_delta, pixel_delta_to_machine_delta, Axis, Camera, MachineDelta, PixelDelta, WorldPoint,
};
use probestation_core::machine::{MachineState, Position3, Probe};
use probestation_core::vision::{calibrate_correction_factor, detect_frame, Label, SceneDescription};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn camera(scale: f64, mirrored: bool) -> Camera<f64> {
    Camera {
        pixel_scale: scale,
        y_mirrored: mirrored,
        width: 1280.0,
        height: 1024.0,
    }
}

proptest! {
    #[test]
    fn machine_pixel_machine_round_trip(dx in -200.0..200.0f64, dy in -200.0..200.0f64,
                                        scale in 0.001..0.05f64, mirrored: bool) {
        let cam = camera(scale, mirrored);
        let d = MachineDelta::new(dx, dy);
        let back = pixel_delta_to_machine_delta(machine_delta_to_pixel_delta(d, &cam).unwrap(), &cam).unwrap();
        prop_assert!((back.dx - dx).abs() <= 1e-9);
        prop_assert!((back.dy - dy).abs() <= 1e-9);
    }

    #[test]
    fn pixel_to_machine_is_linear(a in (-1e4..1e4f64, -1e4..1e4f64), b in (-1e4..1e4f64, -1e4..1e4f64),
                                  scale in 0.001..0.05f64, mirrored: bool) {
        let cam = camera(scale, mirrored);
        let (pa, pb) = (PixelDelta::new(a.0, a.1), PixelDelta::new(b.0, b.1));
        let sum = pixel_delta_to_machine_delta(pa + pb, &cam).unwrap();
        let parts = pixel_delta_to_machine_delta(pa, &cam).unwrap() + pixel_delta_to_machine_delta(pb, &cam).unwrap();
        let tol = 1e-12 * (1.0 + sum.dx.abs().max(sum.dy.abs()));
        prop_assert!((sum.dx - parts.dx).abs() <= tol);
        prop_assert!((sum.dy - parts.dy).abs() <= tol);
    }

    /// Boxes stay proper for arbitrary scenes, poses and noise.
    #[test]
    fn detections_are_proper_boxes(jx in -4.0..4.0f64, jy in -4.0..4.0f64, angle in -180.0..180.0f64,
                                   noise in 0.0..50.0f64, seed: u64, span in 0.05..2.0f64, yz in -4000i64..4000) {
        let cfg = MachineConfig::default();
        let mut s = MachineState::at(Position3::new(100.0, 100.0, 10.0));
        s.yz_probe.y.0 = yz;
        let scene = SceneDescription {
            jj_center: WorldPoint::new(100.0 + jx, 100.0 + jy),
            pad_axis_angle: angle,
            pad_span: span,
            noise_sigma: noise,
            ..SceneDescription::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = detect_frame(&scene, &s, &cfg, &mut rng);
        let mut labels: Vec<_> = dets.iter().map(|d| d.label).collect();
        labels.dedup();
        prop_assert_eq!(labels.len(), dets.len());
        for d in dets {
            prop_assert!(d.bbox.u_min < d.bbox.u_max && d.bbox.v_min < d.bbox.v_max);
            prop_assert!((0.0..=1.0).contains(&d.confidence));
        }
    }
}

/// Closed-form projection written independently of the library camera.
fn oracle_project(p: (f64, f64), carriage: (f64, f64), scale: f64, w: f64, h: f64) -> (f64, f64) {
    (w / 2.0 + (p.0 - carriage.0) / scale, h / 2.0 - (p.1 - carriage.1) / scale)
}

#[test]
fn noiseless_detection_matches_independent_projection() {
    let cfg = MachineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (cx, cy) in [(100.0, 100.0), (100.7, 99.2), (100.3, 100.4)] {
        let s = MachineState::at(Position3::new(cx, cy, 10.0));
        let scene = SceneDescription::default();
        let dets = detect_frame(&scene, &s, &cfg, &mut rng);
        assert_eq!(dets.len(), 3);
        let jj = dets.iter().find(|d| d.label == Label::Junction).unwrap();
        let (u, v) = oracle_project((101.2, 98.6), (cx, cy), 0.005, 1280.0, 1024.0);
        let c = jj.bbox.center();
        assert!((c.u - u).abs() < 1e-9 && (c.v - v).abs() < 1e-9);
        // The half-extents of an unrotated junction are half the pad length and half a pad.
        assert!((jj.bbox.width() - 0.25 / 0.005).abs() < 1e-9);
        assert!((jj.bbox.height() - 0.85 / 0.005).abs() < 1e-9);

        let z = dets.iter().find(|d| d.label == Label::ZProbe).unwrap();
        let tip = s.tip_xy(Probe::Z, &cfg);
        let (u, v) = oracle_project((tip.x, tip.y), (cx, cy), 0.005, 1280.0, 1024.0);
        assert!((z.bbox.center().u - u).abs() < 1e-9);
        assert!((z.bbox.v_min - v).abs() < 1e-9);
        assert!(z.bbox.v_max > z.bbox.v_min);
        assert_eq!(z.confidence, 1.0);
    }
}

#[test]
fn detection_is_deterministic_without_noise() {
    let cfg = MachineConfig::default();
    let s = MachineState::at(Position3::new(100.0, 100.0, 10.0));
    let scene = SceneDescription::default();
    let a = detect_frame(&scene, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let b = detect_frame(&scene, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(a, b);
}

/// Calibrating from two noisy frames a known move apart recovers the scale.
/// The centre-difference noise has sigma * sqrt(2); at two of those sigmas
/// about 84% of seeds fall within 2 sigma / |dpx|, and every seed within
/// 5 * sqrt(2) * sigma / |dpx|.
#[test]
fn calibration_converges_to_configured_scale() {
    let cfg = MachineConfig::default();
    let commanded = 2.0;
    let dpx = commanded / cfg.pixel_scale;
    for sigma in [0.5, 1.0, 2.0] {
        let scene = SceneDescription {
            noise_sigma: sigma,
            ..SceneDescription::default()
        };
        let trials = 500;
        let mut within_tight = 0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let before_state = MachineState::at(Position3::new(100.0, 100.0, 10.0));
            let after_state = MachineState::at(Position3::new(100.0 + commanded, 100.0, 10.0));
            let find = |d: Vec<_>| d.into_iter().find(|d: &probestation_core::Detection| d.label == Label::Junction).unwrap();
            let before = find(detect_frame(&scene, &before_state, &cfg, &mut rng));
            let after = find(detect_frame(&scene, &after_state, &cfg, &mut rng));
            let est = calibrate_correction_factor(commanded, Axis::X, &before, &after).unwrap();
            let rel = (est - cfg.pixel_scale).abs() / cfg.pixel_scale;
            assert!(rel <= 5.0 * 2f64.sqrt() * sigma / dpx, "sigma {sigma} seed {seed}: {rel}");
            if rel <= 2.0 * sigma / dpx {
                within_tight += 1;
            }
        }
        assert!(within_tight as f64 >= 0.75 * trials as f64, "sigma {sigma}: {within_tight}/{trials}");
    }
}

#[test]
fn calibration_in_f32() {
    use probestation_core::vision::{BoundingBox, Detection};
    let d = |u: f32| Detection {
        label: Label::Junction,
        bbox: BoundingBox::new(u, 0.0, u + 10.0, 10.0),
        confidence: 1.0f32,
    };
    let k = calibrate_correction_factor(2.0f32, Axis::X, &d(0.0), &d(200.0)).unwrap();
    assert!((k - 0.01).abs() < 1e-7);
}
