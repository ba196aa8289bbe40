//! HeartSway engine: records an occupant's heart-rate and movement trace,
//! turns it into a replay schedule when they leave, and plays it back as
//! vibration pulses and swings to whoever lies down next.
//!
//! Pure signal processing, scheduling and the wire codec live in
//! `heartsway-core`; this crate adds storage, devices, the orchestrator, the
//! HTTP API and the CLI.

pub mod api;
pub mod clock;
pub mod config;
pub mod csvio;
pub mod device;
pub mod driver;
pub mod engine;
pub mod events;
pub mod store;

pub use config::EngineConfig;
pub use engine::{Command, Engine, EngineHandle, Phase, Snapshot};
