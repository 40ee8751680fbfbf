//! Synthetic object detector and the geometry built on its output.
//!
//! The detector reports one axis-aligned box per visible object (the two
//! probes and the junction) with a confidence, exactly what a trained
//! single-shot detector returns. Boxes are projected from the true scene
//! geometry and perturbed with seeded Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MachineConfig;
use crate::geometry::{Axis, Camera, PixelPoint, WorldPoint};
use crate::machine::{MachineState, Probe};
use crate::scalar::{lit, Real};

/// Detections below this confidence are ignored by the control logic.
pub const CONFIDENCE_GATE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("no {0:?} detection in frame")]
    MissingDetection(Label),
    #[error("degenerate calibration: no pixel displacement along the commanded axis")]
    DegenerateCalibration,
    #[error("calibration needs the same object in both frames ({0:?} vs {1:?})")]
    LabelMismatch(Label, Label),
    #[error("calibration is only defined along X or Y")]
    UnsupportedAxis,
    #[error("probe tips coincide; no inter-probe axis")]
    CoincidentTips,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "YZ_PROBE")]
    YzProbe,
    #[serde(rename = "Z_PROBE")]
    ZProbe,
    #[serde(rename = "JJ")]
    Junction,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::YzProbe, Label::ZProbe, Label::Junction];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub u_min: T,
    pub v_min: T,
    pub u_max: T,
    pub v_max: T,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(u_min: T, v_min: T, u_max: T, v_max: T) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn center(&self) -> PixelPoint<T> {
        PixelPoint::new(self.u_min, self.v_min).midpoint(PixelPoint::new(self.u_max, self.v_max))
    }

    pub fn width(&self) -> T {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> T {
        self.v_max - self.v_min
    }

    pub fn is_proper(&self) -> bool {
        self.u_min < self.u_max && self.v_min < self.v_max
    }

    fn translated(&self, du: T, dv: T) -> Self {
        Self::new(self.u_min + du, self.v_min + dv, self.u_max + du, self.v_max + dv)
    }

    fn clipped(&self, width: T, height: T) -> Self {
        let clamp = |x: T, hi: T| x.max(T::zero()).min(hi);
        Self::new(
            clamp(self.u_min, width),
            clamp(self.v_min, height),
            clamp(self.u_max, width),
            clamp(self.v_max, height),
        )
    }

    /// Midpoints of the two edges that terminate the box's long dimension.
    fn end_midpoints(&self) -> [PixelPoint<T>; 2] {
        let c = self.center();
        if self.width() >= self.height() {
            [PixelPoint::new(self.u_min, c.v), PixelPoint::new(self.u_max, c.v)]
        } else {
            [PixelPoint::new(c.u, self.v_min), PixelPoint::new(c.u, self.v_max)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub label: Label,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<T>,
    pub confidence: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

/// Everything the detector needs to know about the chip under the camera.
/// Lengths in mm, angles in degrees, noise in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDescription {
    pub jj_center: WorldPoint<f64>,
    /// Distance between the two probe landing points, one on each pad.
    pub pad_span: f64,
    /// Side of each square contact pad.
    pub pad_size: f64,
    /// Pad axis relative to the inter-probe axis (world +Y), counter-clockwise.
    pub pad_axis_angle: f64,
    pub frame: FrameSize,
    pub noise_sigma: f64,
    pub detect_prob: f64,
    pub rng_seed: u64,
    /// Top surface of the chip in the machine Z frame.
    pub surface_z: f64,
    /// Normal-state resistance of the junction (ohm).
    pub true_resistance: f64,
    /// Contact resistance of each probe (ohm).
    pub contact_resistance: f64,
    pub voltage_noise_sigma: f64,
}

impl Default for SceneDescription {
    /// The standard scene: JJ 1.84 mm from the probe landing points, tips
    /// 0.75 mm above the chip with the carriage at (100, 100, 10).
    fn default() -> Self {
        Self {
            jj_center: WorldPoint::new(101.2, 98.6),
            pad_span: 0.6,
            pad_size: 0.25,
            pad_axis_angle: 0.0,
            frame: FrameSize {
                width: 1280,
                height: 1024,
            },
            noise_sigma: 0.0,
            detect_prob: 1.0,
            rng_seed: 0,
            surface_z: 9.25,
            true_resistance: 1500.0,
            contact_resistance: 0.25,
            voltage_noise_sigma: 0.0,
        }
    }
}

impl SceneDescription {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |m: &str| Err(VisionError::InvalidScene(m.to_string()));
        if !(self.pad_span > 0.0 && self.pad_span.is_finite()) {
            return bad("pad_span must be > 0");
        }
        if !(self.pad_size > 0.0 && self.pad_size.is_finite()) {
            return bad("pad_size must be > 0");
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return bad("detect_prob must lie in [0, 1]");
        }
        if self.frame.width == 0 || self.frame.height == 0 {
            return bad("frame dimensions must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.true_resistance > 0.0 && self.true_resistance.is_finite()) {
            return bad("true_resistance must be > 0");
        }
        if !(self.contact_resistance >= 0.0 && self.voltage_noise_sigma >= 0.0) {
            return bad("contact_resistance and voltage_noise_sigma must be >= 0");
        }
        if !self.jj_center.x.is_finite() || !self.jj_center.y.is_finite() || !self.surface_z.is_finite() {
            return bad("scene coordinates must be finite");
        }
        Ok(())
    }

    pub fn camera(&self, cfg: &MachineConfig) -> Camera<f64> {
        cfg.camera(self.frame.width as f64, self.frame.height as f64)
    }

    /// Pad axis direction in the bed frame for the current rotation stage angle.
    pub fn pad_axis(&self, s: &MachineState, cfg: &MachineConfig) -> WorldPoint<f64> {
        let phi = (self.pad_axis_angle + s.rotation_degrees(cfg)).to_radians();
        WorldPoint::new(-phi.sin(), phi.cos())
    }

    /// Centre of the pad a probe should land on (Z probe on the -axis side).
    pub fn pad_center(&self, probe: Probe, s: &MachineState, cfg: &MachineConfig) -> WorldPoint<f64> {
        let a = self.pad_axis(s, cfg);
        let half = match probe {
            Probe::Z => -self.pad_span / 2.0,
            Probe::Yz => self.pad_span / 2.0,
        };
        WorldPoint::new(self.jj_center.x + a.x * half, self.jj_center.y + a.y * half)
    }

    /// True when the tip lies on its pad (within the square footprint).
    pub fn tip_on_pad(&self, probe: Probe, s: &MachineState, cfg: &MachineConfig) -> bool {
        let a = self.pad_axis(s, cfg);
        let c = self.pad_center(probe, s, cfg);
        let t = s.tip_xy(probe, cfg);
        let (dx, dy) = (t.x - c.x, t.y - c.y);
        let along = dx * a.x + dy * a.y;
        let across = -dx * a.y + dy * a.x;
        along.abs() <= self.pad_size / 2.0 && across.abs() <= self.pad_size / 2.0
    }
}

/// Noise-free boxes for every object, in label order, before clipping.
pub fn true_boxes(scene: &SceneDescription, s: &MachineState, cfg: &MachineConfig) -> [(Label, BoundingBox<f64>); 3] {
    let cam = scene.camera(cfg);
    let carriage = s.carriage.xy();
    let px = |mm: f64| mm / cfg.pixel_scale;

    let probe_box = |probe: Probe, dir: f64| {
        let tip = s.tip_xy(probe, cfg);
        let far = WorldPoint::new(tip.x, tip.y + dir * cfg.probe_length);
        let a = cam.project(tip, carriage);
        let b = cam.project(far, carriage);
        let half_w = px(cfg.probe_width) / 2.0;
        BoundingBox::new(a.u - half_w, a.v.min(b.v), a.u + half_w, a.v.max(b.v))
    };

    let junction = {
        let axis = scene.pad_axis(s, cfg);
        let half_len = (scene.pad_span + scene.pad_size) / 2.0;
        let half_wid = scene.pad_size / 2.0;
        let hx = half_len * axis.x.abs() + half_wid * axis.y.abs();
        let hy = half_len * axis.y.abs() + half_wid * axis.x.abs();
        let c = cam.project(scene.jj_center, carriage);
        BoundingBox::new(c.u - px(hx), c.v - px(hy), c.u + px(hx), c.v + px(hy))
    };

    [
        // Probe bodies run away from the junction: YZ towards +Y, Z towards -Y.
        (Label::YzProbe, probe_box(Probe::Yz, 1.0)),
        (Label::ZProbe, probe_box(Probe::Z, -1.0)),
        (Label::Junction, junction),
    ]
}

/// Runs the synthetic detector on the current pose.
///
/// Random draws happen in a fixed order (per object: keep, noise u, noise v)
/// whether or not the object ends up reported, so a given seed always
/// produces the same stream.
pub fn detect_frame<R: Rng + ?Sized>(
    scene: &SceneDescription,
    s: &MachineState,
    cfg: &MachineConfig,
    rng: &mut R,
) -> Vec<Detection<f64>> {
    let (w, h) = (scene.frame.width as f64, scene.frame.height as f64);
    let mut out = Vec::with_capacity(3);
    for (label, bbox) in true_boxes(scene, s, cfg) {
        let keep: f64 = rng.random();
        let nu: f64 = rng.sample(StandardNormal);
        let nv: f64 = rng.sample(StandardNormal);
        if keep >= scene.detect_prob {
            continue;
        }
        let (du, dv) = (nu * scene.noise_sigma, nv * scene.noise_sigma);
        let noisy = bbox.translated(du, dv).clipped(w, h);
        if !noisy.is_proper() {
            continue;
        }
        let r = du.hypot(dv);
        let confidence = (scene.detect_prob - 0.02 * r / (1.0 + r)).clamp(0.0, 1.0);
        out.push(Detection {
            label,
            bbox: noisy,
            confidence,
        });
    }
    out
}

/// Correction factor (mm per pixel) from a known carriage move and the
/// displacement of the same object between two frames.
pub fn calibrate_correction_factor<T: Real>(
    commanded_mm: T,
    axis: Axis,
    before: &Detection<T>,
    after: &Detection<T>,
) -> Result<T, VisionError> {
    if before.label != after.label {
        return Err(VisionError::LabelMismatch(before.label, after.label));
    }
    let d = after.bbox.center() - before.bbox.center();
    let moved = match axis {
        Axis::X => d.du,
        Axis::Y => d.dv,
        Axis::Z => return Err(VisionError::UnsupportedAxis),
    }
    .abs();
    if moved == T::zero() || !moved.is_finite() {
        return Err(VisionError::DegenerateCalibration);
    }
    Ok(commanded_mm.abs() / moved)
}

/// Pixel positions the alignment loop works with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets<T> {
    pub z_tip: PixelPoint<T>,
    pub yz_tip: PixelPoint<T>,
    pub jj_center: PixelPoint<T>,
    /// Landing points for the Z probe and the YZ probe respectively.
    pub pad_targets: (PixelPoint<T>, PixelPoint<T>),
}

fn best<T: Real>(dets: &[Detection<T>], label: Label) -> Result<&Detection<T>, VisionError> {
    let gate: T = lit(CONFIDENCE_GATE);
    dets.iter()
        .filter(|d| d.label == label && d.confidence >= gate)
        .max_by(|a, b| a.confidence.partial_cmp(&b.confidence).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(VisionError::MissingDetection(label))
}

/// Probe tip: midpoint of the box end (along its long dimension) nearest `toward`.
pub fn tip_of<T: Real>(bbox: &BoundingBox<T>, toward: PixelPoint<T>) -> PixelPoint<T> {
    let [a, b] = bbox.end_midpoints();
    if a.distance(toward) <= b.distance(toward) {
        a
    } else {
        b
    }
}

/// Extracts probe tips and the two pad landing points from one frame.
///
/// Landing points sit `pad_span / 2` (converted to pixels) either side of
/// the junction centre along the inter-probe axis.
pub fn locate_targets<T: Real>(
    dets: &[Detection<T>],
    pad_span_mm: T,
    pixel_scale: T,
) -> Result<Targets<T>, VisionError> {
    let jj = best(dets, Label::Junction)?;
    let z = best(dets, Label::ZProbe)?;
    let yz = best(dets, Label::YzProbe)?;
    let center = jj.bbox.center();
    // The probes point at each other, so each tip is the end facing the other probe.
    let z_tip = tip_of(&z.bbox, yz.bbox.center());
    let yz_tip = tip_of(&yz.bbox, z.bbox.center());
    let axis = yz_tip - z_tip;
    let len = axis.norm();
    if len == T::zero() {
        return Err(VisionError::CoincidentTips);
    }
    let half: T = pad_span_mm / pixel_scale * lit(0.5);
    let offset = axis.scale(half / len);
    Ok(Targets {
        z_tip,
        yz_tip,
        jj_center: center,
        pad_targets: (center + offset.scale(-T::one()), center + offset),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::Position3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(label: Label, b: [f64; 4]) -> Detection<f64> {
        Detection {
            label,
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
            confidence: 0.9,
        }
    }

    fn centered_scene() -> (SceneDescription, MachineState, MachineConfig) {
        let cfg = MachineConfig::default();
        let s = MachineState::at(Position3::new(100.0, 100.0, 10.0));
        let scene = SceneDescription {
            jj_center: WorldPoint::new(100.0, 100.0),
            ..SceneDescription::default()
        };
        (scene, s, cfg)
    }

    #[test]
    fn noiseless_junction_at_frame_center() {
        let (scene, s, cfg) = centered_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dets = detect_frame(&scene, &s, &cfg, &mut rng);
        let jj = dets.iter().find(|d| d.label == Label::Junction).unwrap();
        assert_eq!(jj.bbox.center(), PixelPoint::new(640.0, 512.0));
        assert_eq!(jj.confidence, 1.0);
        assert_eq!(dets.len(), 3);
    }

    #[test]
    fn carriage_move_shifts_junction_not_probes() {
        let (scene, s, cfg) = centered_scene();
        let mut moved = s;
        moved.carriage.x += 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = detect_frame(&scene, &s, &cfg, &mut rng);
        let b = detect_frame(&scene, &moved, &cfg, &mut rng);
        for (da, db) in a.iter().zip(&b) {
            let shift = db.bbox.center().u - da.bbox.center().u;
            match da.label {
                Label::Junction => assert!((shift + 200.0).abs() < 1e-9), // 1 mm at 0.005 mm/px
                _ => assert_eq!(shift, 0.0),
            }
        }
    }

    #[test]
    fn zero_detect_prob_reports_nothing() {
        let (mut scene, s, cfg) = centered_scene();
        scene.detect_prob = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(detect_frame(&scene, &s, &cfg, &mut rng).is_empty());
    }

    #[test]
    fn out_of_frame_objects_are_absent() {
        let (mut scene, s, cfg) = centered_scene();
        scene.jj_center = WorldPoint::new(150.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dets = detect_frame(&scene, &s, &cfg, &mut rng);
        assert!(dets.iter().all(|d| d.label != Label::Junction));
        assert_eq!(dets.len(), 2);
    }

    #[test]
    fn calibration_ratio() {
        let before = det(Label::Junction, [300.0, 200.0, 340.0, 240.0]);
        let after200 = det(Label::Junction, [500.0, 200.0, 540.0, 240.0]);
        let after100 = det(Label::Junction, [400.0, 200.0, 440.0, 240.0]);
        assert!((calibrate_correction_factor(2.0, Axis::X, &before, &after200).unwrap() - 0.01).abs() < 1e-15);
        assert!((calibrate_correction_factor(1.0, Axis::X, &before, &after100).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(
            calibrate_correction_factor(1.0, Axis::X, &before, &before),
            Err(VisionError::DegenerateCalibration)
        );
        let other = det(Label::ZProbe, [0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            calibrate_correction_factor(1.0, Axis::X, &before, &other),
            Err(VisionError::LabelMismatch(..))
        ));
    }

    #[test]
    fn junction_center_is_box_midpoint() {
        let d = det(Label::Junction, [300.0, 200.0, 340.0, 240.0]);
        assert_eq!(d.bbox.center(), PixelPoint::new(320.0, 220.0));
    }

    #[test]
    fn tip_is_nearest_end_midpoint() {
        // Horizontal probe to the left of the junction: tip on its right edge.
        let probe = BoundingBox::new(100.0, 210.0, 280.0, 230.0);
        assert_eq!(tip_of(&probe, PixelPoint::new(320.0, 220.0)), PixelPoint::new(280.0, 220.0));
        // Vertical probe below the junction, laterally offset: tip on its top edge.
        let probe = BoundingBox::new(600.0, 300.0, 620.0, 700.0);
        assert_eq!(tip_of(&probe, PixelPoint::new(900.0, 250.0)), PixelPoint::new(610.0, 300.0));
    }

    #[test]
    fn missing_label_reported() {
        let dets = [
            det(Label::ZProbe, [100.0, 210.0, 280.0, 230.0]),
            det(Label::YzProbe, [360.0, 210.0, 540.0, 230.0]),
        ];
        assert_eq!(
            locate_targets(&dets, 0.6, 0.005),
            Err(VisionError::MissingDetection(Label::Junction))
        );
    }

    #[test]
    fn low_confidence_is_ignored() {
        let mut jj = det(Label::Junction, [300.0, 200.0, 340.0, 240.0]);
        jj.confidence = 0.3;
        let dets = [
            det(Label::ZProbe, [100.0, 210.0, 280.0, 230.0]),
            det(Label::YzProbe, [360.0, 210.0, 540.0, 230.0]),
            jj,
        ];
        assert!(locate_targets(&dets, 0.6, 0.005).is_err());
    }

    #[test]
    fn pad_targets_straddle_the_junction_along_probe_axis() {
        let dets = [
            det(Label::ZProbe, [100.0, 210.0, 280.0, 230.0]),
            det(Label::YzProbe, [360.0, 210.0, 540.0, 230.0]),
            det(Label::Junction, [300.0, 200.0, 340.0, 240.0]),
        ];
        let t = locate_targets(&dets, 0.4, 0.01).unwrap();
        assert_eq!(t.z_tip, PixelPoint::new(280.0, 220.0));
        assert_eq!(t.yz_tip, PixelPoint::new(360.0, 220.0));
        assert_eq!(t.pad_targets.0, PixelPoint::new(300.0, 220.0));
        assert_eq!(t.pad_targets.1, PixelPoint::new(340.0, 220.0));
    }

    #[test]
    fn rotated_pads_widen_the_box() {
        let (mut scene, s, cfg) = centered_scene();
        let straight = true_boxes(&scene, &s, &cfg)[2].1;
        scene.pad_axis_angle = 30.0;
        let tilted = true_boxes(&scene, &s, &cfg)[2].1;
        assert!(tilted.width() > straight.width());
        assert!(tilted.height() / tilted.width() < straight.height() / straight.width());
    }
}
