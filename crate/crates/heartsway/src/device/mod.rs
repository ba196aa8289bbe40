//! Sensor and actuator backends.

use heartsway_core::replay::VibrationPulse;
use heartsway_core::signal::{BpmSample, StretchSample};
use heartsway_core::wire::Message;
use heartsway_core::EpochMs;
use thiserror::Error;

pub mod serial;
pub mod sim;

pub use serial::SerialBackend;
pub use sim::{IoLog, IoRecord, OccupantScript, Scenario, SimBackend, channel};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("backend is closed")]
    BackendClosed,
    #[error("cannot open device {device}: {reason}")]
    OpenFailed { device: String, reason: String },
    #[error("invalid occupant script: {0}")]
    InvalidScript(String),
    #[error("controller link: {0}")]
    Link(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Actuation {
    Vibrate(VibrationPulse),
    Swing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub started_at: EpochMs,
    pub done_at: EpochMs,
}

/// One hammock's hardware. Owned by a single task; every call carries the
/// caller's notion of now so simulated backends can follow a virtual clock.
pub trait Backend: Send {
    /// Latest distance reading in cm, if the sensor produced one.
    fn read_distance(&mut self, now: EpochMs) -> Result<Option<f64>, DeviceError>;

    /// Powers the pulse and stretch sensors and the actuators.
    fn activate(&mut self, now: EpochMs) -> Result<(), DeviceError>;

    fn deactivate(&mut self, now: EpochMs) -> Result<(), DeviceError>;

    fn read_pulse(&mut self, now: EpochMs) -> Result<Vec<BpmSample>, DeviceError>;

    fn read_stretch(&mut self, now: EpochMs) -> Result<Vec<StretchSample>, DeviceError>;

    fn actuate(&mut self, now: EpochMs, what: Actuation) -> Result<Completion, DeviceError>;

    /// Hands schedule pages to the controller; returns the pages delivered.
    fn load_schedule(&mut self, now: EpochMs, pages: &[Message]) -> Result<usize, DeviceError>;

    fn close(&mut self, now: EpochMs);
}
