//! Core processing for the HeartSway hammock: turns one occupant's heart-rate
//! and stretch-cord trace into a looping replay schedule for the next
//! occupant, and defines the framed serial protocol spoken with the
//! actuator controller.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function over its inputs; clocks, storage and devices live in the `heartsway`
//! crate.
//!
//! - [`signal`]: BPM to inter-beat intervals, rolling outlier rejection and
//!   kernel PELT changepoint detection.
//! - [`replay`]: schedule preparation, looped playback and pagination.
//! - [`wire`]: frame codec and stop-and-wait page transfer.
//! - [`presence`]: debounced occupancy detection from distance readings.
//! - [`cue`]: Wizard-of-Oz swing cues.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cue;
pub mod presence;
pub mod record;
pub mod replay;
pub mod signal;
pub mod wire;

pub use record::{SessionId, SessionRecord};

/// Milliseconds since the Unix epoch (or since the start of a virtual clock).
pub type EpochMs = u64;
