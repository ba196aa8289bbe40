//! Raw sensor series to trace events.
//!
//! Heart rate arrives as a BPM series and becomes one [`IbiEvent`] per beat.
//! The stretch cord is sampled at 1 Hz; outliers are removed with a rolling
//! mean ± k·std rule and the surviving series is segmented with PELT under an
//! RBF kernel cost. Each changepoint is a [`MovementMoment`]. Only timing is
//! kept, never intensity.

mod filter;
mod ibi;
mod pelt;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::EpochMs;

pub use filter::{FilterOutcome, rolling_outlier_filter};
pub use ibi::bpm_to_ibi;
pub use pelt::{median_heuristic_gamma, pelt_changepoints, rbf_segment_cost};

/// Lowest heart rate accepted as a plausible reading (exclusive).
pub const MIN_PLAUSIBLE_BPM: f64 = 20.0;
/// Highest heart rate accepted as a plausible reading (exclusive).
pub const MAX_PLAUSIBLE_BPM: f64 = 250.0;
/// Nominal stretch sampling period.
pub const STRETCH_PERIOD_MS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpmSample {
    pub t: EpochMs,
    pub bpm: f64,
}

impl BpmSample {
    pub fn new(t: EpochMs, bpm: f64) -> Self {
        Self { t, bpm }
    }

    /// Pulse sensors emit junk while the finger settles; anything outside
    /// (20, 250) BPM is discarded before it reaches the store.
    pub fn is_plausible(&self) -> bool {
        self.bpm > MIN_PLAUSIBLE_BPM && self.bpm < MAX_PLAUSIBLE_BPM
    }
}

/// One beat with its interval to the previous beat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbiEvent {
    pub t: EpochMs,
    pub ibi_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchSample {
    pub t: EpochMs,
    pub value: f64,
}

impl StretchSample {
    pub fn new(t: EpochMs, value: f64) -> Self {
        Self { t, value }
    }
}

/// A toss-and-turn instant. Deliberately carries no magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MovementMoment {
    pub t: EpochMs,
}

/// Rolling outlier rejection parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Trailing window length.
    pub window: usize,
    /// Points further than `k_sigma` standard deviations from the window
    /// mean are removed.
    pub k_sigma: f64,
    /// Below this many trailing points a sample is always kept.
    pub min_window: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            window: 100,
            k_sigma: 3.0,
            min_window: 5,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.min_window < 2 {
            return Err(SignalError::InvalidParams("min_window must be >= 2"));
        }
        if self.window < self.min_window {
            return Err(SignalError::InvalidParams("window must be >= min_window"));
        }
        if !(self.k_sigma.is_finite() && self.k_sigma > 0.0) {
            return Err(SignalError::InvalidParams("k_sigma must be finite and > 0"));
        }
        Ok(())
    }
}

/// PELT parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeltParams {
    /// Cost added per changepoint.
    pub penalty: f64,
    /// RBF kernel `gamma` in `exp(-gamma * d^2)`. `None` resolves it from the
    /// data with the median heuristic.
    pub gamma: Option<f64>,
}

impl Default for PeltParams {
    fn default() -> Self {
        Self {
            penalty: 10.0,
            gamma: None,
        }
    }
}

impl PeltParams {
    pub fn with_penalty(penalty: f64) -> Self {
        Self {
            penalty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(SignalError::InvalidParams("penalty must be finite and >= 0"));
        }
        if let Some(gamma) = self.gamma
            && !(gamma.is_finite() && gamma > 0.0)
        {
            return Err(SignalError::InvalidParams("gamma must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SignalError {
    #[error("empty series")]
    EmptySeries,
    #[error("non-positive bpm {bpm} at t={t}")]
    NonPositiveBpm { t: EpochMs, bpm: f64 },
    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotonicTime { index: usize },
    #[error("series too short: {len} points, need at least 2")]
    SeriesTooShort { len: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

/// Movement moments from a stretch series: rolling outlier filter, then PELT
/// on the surviving values.
///
/// A changepoint at filtered position `c` starts the new regime. Samples
/// removed between the last kept sample of the old regime and the first kept
/// sample of the new one were outliers against the old regime, so the moment
/// is reported at the first input sample after the old regime ends. With no
/// removed samples in between this is simply the first kept sample of the
/// new segment.
pub fn movement_moments(
    stretch: &[StretchSample],
    filter: &FilterParams,
    pelt: &PeltParams,
) -> Result<Vec<MovementMoment>, SignalError> {
    if let Some(index) = stretch.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(SignalError::NonMonotonicTime { index: index + 1 });
    }
    let values: Vec<f64> = stretch.iter().map(|s| s.value).collect();
    let outcome = rolling_outlier_filter(&values, filter);
    let kept_at = outcome.kept_indices(values.len());
    let changepoints = pelt_changepoints(&outcome.kept, pelt)?;
    Ok(changepoints
        .into_iter()
        .map(|c| MovementMoment {
            t: stretch[kept_at[c - 1] + 1].t,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn stretch_from(values: &[f64]) -> Vec<StretchSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| StretchSample::new(i as u64 * 1000, v))
            .collect()
    }

    #[test]
    fn constant_stretch_has_no_moments() {
        let s = stretch_from(&[250.0; 120]);
        let m = movement_moments(&s, &FilterParams::default(), &PeltParams::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn two_level_stretch_moves_at_level_change() {
        let mut values = vec![100.0; 60];
        values.extend_from_slice(&[400.0; 60]);
        let s = stretch_from(&values);
        let m = movement_moments(&s, &FilterParams::default(), &PeltParams::default()).unwrap();
        assert_eq!(m, vec![MovementMoment { t: 60_000 }]);
    }

    #[test]
    fn empty_stretch_is_too_short() {
        let err = movement_moments(&[], &FilterParams::default(), &PeltParams::default());
        assert_eq!(err, Err(SignalError::SeriesTooShort { len: 0 }));
    }

    #[test]
    fn unordered_stretch_is_rejected() {
        let s = vec![StretchSample::new(5, 1.0), StretchSample::new(5, 2.0)];
        let err = movement_moments(&s, &FilterParams::default(), &PeltParams::default());
        assert_eq!(err, Err(SignalError::NonMonotonicTime { index: 1 }));
    }

    #[test]
    fn default_params_validate() {
        FilterParams::default().validate().unwrap();
        PeltParams::default().validate().unwrap();
        assert!(
            FilterParams {
                min_window: 1,
                ..FilterParams::default()
            }
            .validate()
            .is_err()
        );
        assert!(PeltParams::with_penalty(-1.0).validate().is_err());
    }
}
