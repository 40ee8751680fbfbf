//! Virtual automated probe station for Josephson-junction resistance
//! measurements.
//!
//! The core pieces are a virtual 3D printer speaking G-code, stepper stages
//! behind a line protocol, a load cell with a linear-elastic contact model,
//! a synthetic object detector, the alignment and lowering controllers, and
//! the IV sweep with its resistance fit. [`sim::Simulator`] ties them to a
//! single deterministic clock.
//!
//! Numeric kernels are generic over [`scalar::Real`] (or [`scalar::Field`]
//! where no roots are needed); the aliases below fix them to `f64`.

pub mod autocontrol;
pub mod config;
pub mod events;
pub mod force;
pub mod gcode;
pub mod geometry;
pub mod machine;
pub mod measurement;
pub mod scalar;
pub mod sim;
pub mod stage;
pub mod vision;

pub type WorldPoint = geometry::WorldPoint<f64>;
pub type PixelPoint = geometry::PixelPoint<f64>;
pub type PixelDelta = geometry::PixelDelta<f64>;
pub type MachineDelta = geometry::MachineDelta<f64>;
pub type Camera = geometry::Camera<f64>;
pub type BoundingBox = vision::BoundingBox<f64>;
pub type Detection = vision::Detection<f64>;
pub type Targets = vision::Targets<f64>;

pub use config::MachineConfig;
pub use events::SimEvent;
pub use force::ForceReading;
pub use machine::MachineState;
pub use measurement::{IVSample, MeasurementResult};
pub use sim::{SimSetup, Simulator};
