//! Station service for the virtual probe station: a versioned NDJSON command
//! and telemetry API over TCP, an append-only session log with
//! deterministic replay, and timing and measurement reports.

pub mod api;
pub mod replay;
pub mod report;
pub mod server;
pub mod service;
pub mod session;
pub mod telemetry;

pub use api::{Ack, ApiCommand, ApiError};
pub use replay::{replay_session, ReplayReport};
pub use report::Report;
pub use service::{Completion, Station, StationOptions};
pub use session::{read_session, Session, SessionRecord};
