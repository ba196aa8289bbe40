//! Occupancy from the upward-facing distance sensor under the hammock: the
//! fabric sags toward the sensor when someone lies in it.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresenceState {
    Vacant,
    Occupied,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresenceParams {
    /// Readings below this distance count as occupied.
    pub threshold_cm: f64,
    /// Consecutive agreeing readings needed to change state.
    pub debounce_count: u32,
    pub poll_period_ms: u64,
}

impl Default for PresenceParams {
    fn default() -> Self {
        Self {
            threshold_cm: 40.0,
            debounce_count: 3,
            poll_period_ms: 200,
        }
    }
}

impl PresenceParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.threshold_cm.is_finite() && self.threshold_cm > 0.0) {
            return Err("threshold_cm must be > 0");
        }
        if self.debounce_count == 0 {
            return Err("debounce_count must be >= 1");
        }
        if self.poll_period_ms == 0 {
            return Err("poll_period_ms must be > 0");
        }
        Ok(())
    }
}

/// Debounced presence state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PresenceTracker {
    state: PresenceState,
    streak: u32,
}

impl Default for PresenceTracker {
    fn default() -> Self {
        Self::new(PresenceState::Vacant)
    }
}

impl PresenceTracker {
    pub fn new(state: PresenceState) -> Self {
        Self { state, streak: 0 }
    }

    pub fn state(&self) -> PresenceState {
        self.state
    }

    /// Feeds one distance reading; returns the new state on a transition.
    pub fn update(&mut self, distance_cm: f64, params: &PresenceParams) -> Option<PresenceState> {
        let reading = if distance_cm < params.threshold_cm {
            PresenceState::Occupied
        } else {
            PresenceState::Vacant
        };
        if reading == self.state {
            self.streak = 0;
            return None;
        }
        self.streak += 1;
        if self.streak >= params.debounce_count {
            self.state = reading;
            self.streak = 0;
            Some(reading)
        } else {
            None
        }
    }

    /// Forces a state, e.g. from an operator override.
    pub fn force(&mut self, state: PresenceState) {
        self.state = state;
        self.streak = 0;
    }
}

/// Single-step form of [`PresenceTracker::update`].
pub fn presence_update(
    tracker: &mut PresenceTracker,
    distance_cm: f64,
    params: &PresenceParams,
) -> Option<PresenceState> {
    tracker.update(distance_cm, params)
}
