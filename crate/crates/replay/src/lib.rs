//! Headless replay of editing sessions against recorded model replies.

pub mod authored;
pub mod runner;
pub mod script;

pub use runner::{replay, replay_file, ReplayError, ReplayMetrics, ReplayOptions, ReplayReport, StepReport};
pub use script::{SessionScript, Step};
