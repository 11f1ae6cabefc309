//! Session service: data import, chart and widget commands, widget results,
//! an event-sourced session log and telemetry, served over REST.

pub mod engine;
pub mod error;
pub mod events;
pub mod http;
pub mod import;
pub mod persist;
pub mod state;
pub mod telemetry;

pub use engine::{Engine, EngineConfig};
pub use error::{ErrorKind, ServiceError};
pub use import::Payload;
