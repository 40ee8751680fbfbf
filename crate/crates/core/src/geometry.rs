//! Coordinate frames: bed (world) millimetres and camera pixels.
//!
//! The camera looks straight down the Z axis and is rigidly mounted on the
//! carriage, so the optical centre always sits over the carriage's XY
//! position. Pixel `u` grows with world `x`; pixel `v` grows with world `y`
//! unless the image is vertically mirrored, in which case it shrinks.

use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("non-finite coordinate in frame conversion")]
    NonFinite,
}

/// Cartesian machine axis addressable by jogging and G-code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn letter(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

/// Direction of a jog, rotation click or stage move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn apply<T: Real>(self, value: T) -> T {
        match self {
            Sign::Plus => value,
            Sign::Minus => -value,
        }
    }
}

impl Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Point on the bed in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint<T> {
    pub x: T,
    pub y: T,
}

/// Point in the camera frame in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint<T> {
    pub u: T,
    pub v: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelDelta<T> {
    pub du: T,
    pub dv: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineDelta<T> {
    pub dx: T,
    pub dy: T,
}

impl<T: Real> WorldPoint<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn offset(self, d: MachineDelta<T>) -> Self {
        Self::new(self.x + d.dx, self.y + d.dy)
    }

    pub fn delta_to(self, other: Self) -> MachineDelta<T> {
        MachineDelta::new(other.x - self.x, other.y - self.y)
    }

    pub fn distance(self, other: Self) -> T {
        self.delta_to(other).norm()
    }
}

impl<T: Real> PixelPoint<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn midpoint(self, other: Self) -> Self {
        let half: T = lit(0.5);
        Self::new((self.u + other.u) * half, (self.v + other.v) * half)
    }

    pub fn distance(self, other: Self) -> T {
        (other - self).norm()
    }
}

impl<T: Real> PixelDelta<T> {
    pub fn new(du: T, dv: T) -> Self {
        Self { du, dv }
    }

    pub fn norm(self) -> T {
        self.du.hypot(self.dv)
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.du * k, self.dv * k)
    }

    pub fn is_finite(self) -> bool {
        self.du.is_finite() && self.dv.is_finite()
    }
}

impl<T: Real> MachineDelta<T> {
    pub fn new(dx: T, dy: T) -> Self {
        Self { dx, dy }
    }

    pub fn norm(self) -> T {
        self.dx.hypot(self.dy)
    }

    pub fn is_finite(self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

impl<T: Real> Sub for PixelPoint<T> {
    type Output = PixelDelta<T>;

    fn sub(self, rhs: Self) -> PixelDelta<T> {
        PixelDelta::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl<T: Real> Add<PixelDelta<T>> for PixelPoint<T> {
    type Output = PixelPoint<T>;

    fn add(self, rhs: PixelDelta<T>) -> PixelPoint<T> {
        PixelPoint::new(self.u + rhs.du, self.v + rhs.dv)
    }
}

impl<T: Real> Add for PixelDelta<T> {
    type Output = PixelDelta<T>;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.du + rhs.du, self.dv + rhs.dv)
    }
}

impl<T: Real> Add for MachineDelta<T> {
    type Output = MachineDelta<T>;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

/// Optics of the downward-looking camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    /// Correction factor: millimetres per pixel.
    pub pixel_scale: T,
    pub y_mirrored: bool,
    pub width: T,
    pub height: T,
}

impl<T: Real> Camera<T> {
    fn v_sign(&self) -> T {
        if self.y_mirrored {
            -T::one()
        } else {
            T::one()
        }
    }

    pub fn center(&self) -> PixelPoint<T> {
        let half: T = lit(0.5);
        PixelPoint::new(self.width * half, self.height * half)
    }

    /// Projects a bed point into the frame of a camera centred over `carriage`.
    pub fn project(&self, point: WorldPoint<T>, carriage: WorldPoint<T>) -> PixelPoint<T> {
        let c = self.center();
        PixelPoint::new(
            c.u + (point.x - carriage.x) / self.pixel_scale,
            c.v + self.v_sign() * (point.y - carriage.y) / self.pixel_scale,
        )
    }

    pub fn contains(&self, p: PixelPoint<T>) -> bool {
        p.u >= T::zero() && p.u <= self.width && p.v >= T::zero() && p.v <= self.height
    }
}

/// Converts a displacement observed in the camera frame into the carriage
/// displacement that reproduces it on the bed.
pub fn pixel_delta_to_machine_delta<T: Real>(
    d: PixelDelta<T>,
    camera: &Camera<T>,
) -> Result<MachineDelta<T>, FrameError> {
    if !d.is_finite() {
        return Err(FrameError::NonFinite);
    }
    let dx = d.du * camera.pixel_scale;
    let dy = camera.v_sign() * d.dv * camera.pixel_scale;
    Ok(MachineDelta::new(dx, dy))
}

/// Inverse of [`pixel_delta_to_machine_delta`].
pub fn machine_delta_to_pixel_delta<T: Real>(
    d: MachineDelta<T>,
    camera: &Camera<T>,
) -> Result<PixelDelta<T>, FrameError> {
    if !d.is_finite() {
        return Err(FrameError::NonFinite);
    }
    Ok(PixelDelta::new(
        d.dx / camera.pixel_scale,
        camera.v_sign() * d.dy / camera.pixel_scale,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(mirrored: bool) -> Camera<f64> {
        Camera {
            pixel_scale: 0.01,
            y_mirrored: mirrored,
            width: 640.0,
            height: 480.0,
        }
    }

    #[test]
    fn pure_x_scaling() {
        let d = pixel_delta_to_machine_delta(PixelDelta::new(100.0, 0.0), &cam(true)).unwrap();
        assert_eq!(d, MachineDelta::new(1.0, 0.0));
    }

    #[test]
    fn mirror_flips_y() {
        let d = pixel_delta_to_machine_delta(PixelDelta::new(0.0, 50.0), &cam(true)).unwrap();
        assert_eq!(d, MachineDelta::new(0.0, -0.5));
        let d = pixel_delta_to_machine_delta(PixelDelta::new(0.0, 50.0), &cam(false)).unwrap();
        assert_eq!(d, MachineDelta::new(0.0, 0.5));
    }

    #[test]
    fn zero_maps_to_zero() {
        let d = pixel_delta_to_machine_delta(PixelDelta::new(0.0, 0.0), &cam(true)).unwrap();
        assert_eq!(d.dx, 0.0);
        assert_eq!(d.dy, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            pixel_delta_to_machine_delta(PixelDelta::new(f64::NAN, 0.0), &cam(true)),
            Err(FrameError::NonFinite)
        );
        assert!(machine_delta_to_pixel_delta(MachineDelta::new(0.0, f64::INFINITY), &cam(true)).is_err());
    }

    #[test]
    fn works_in_f32() {
        let c = Camera::<f32> {
            pixel_scale: 0.01,
            y_mirrored: true,
            width: 640.0,
            height: 480.0,
        };
        let d = pixel_delta_to_machine_delta(PixelDelta::new(100.0f32, 50.0), &c).unwrap();
        assert!((d.dx - 1.0).abs() < 1e-6 && (d.dy + 0.5).abs() < 1e-6);
    }

    #[test]
    fn carriage_motion_moves_world_oppositely() {
        let c = cam(true);
        let jj = WorldPoint::new(50.0, 50.0);
        let before = c.project(jj, WorldPoint::new(50.0, 50.0));
        let after = c.project(jj, WorldPoint::new(51.0, 50.0));
        assert_eq!(before, c.center());
        assert!((after.u - before.u + 100.0).abs() < 1e-9);
    }
}
