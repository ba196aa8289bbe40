//! Replay schedules: a finished session compiled into beat and swing offsets
//! that loop over the source session's duration.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{SessionId, SessionRecord};
use crate::signal::{self, FilterParams, PeltParams, SignalError};

/// Points per controller page.
pub const DEFAULT_PAGE_SIZE: usize = 30;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySchedule {
    pub source_session: SessionId,
    /// Session-relative, strictly increasing, all `< loop_period_ms`.
    pub beat_offsets_ms: Vec<u64>,
    /// Session-relative, strictly increasing, all `< loop_period_ms`.
    pub swing_offsets_ms: Vec<u64>,
    /// Duration of the source session, trailing silence included.
    pub loop_period_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    // Declaration order is the tie order: swings fire first at equal offsets.
    Swing,
    Beat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybackEvent {
    pub kind: EventKind,
    pub offset_ms: u64,
    pub loop_index: u64,
}

impl PlaybackEvent {
    /// Fire time relative to replay start.
    pub fn at(&self, loop_period_ms: u64) -> u64 {
        self.loop_index * loop_period_ms + self.offset_ms
    }
}

/// What playback should do at a given elapsed time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextEvent {
    /// `event` is due exactly now.
    Fire(PlaybackEvent),
    /// Nothing is due for `until_ms`; `event` comes next.
    Idle { until_ms: u64, event: PlaybackEvent },
}

/// Heartbeat vibration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VibrationPulse {
    /// Fraction of full PWM drive, in (0, 1].
    pub strength: f64,
    pub duration_ms: u32,
    /// Informational; the motor is driven by duty cycle only.
    pub motor_rated_rpm: u32,
}

impl Default for VibrationPulse {
    fn default() -> Self {
        Self {
            strength: 0.40,
            duration_ms: 100,
            motor_rated_rpm: 9000,
        }
    }
}

impl VibrationPulse {
    pub fn validate(&self) -> Result<(), ReplayError> {
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return Err(ReplayError::InvalidPulse("strength must be in (0, 1]"));
        }
        if self.duration_ms == 0 {
            return Err(ReplayError::InvalidPulse("duration_ms must be > 0"));
        }
        Ok(())
    }

    /// Drive level on the controller's 8-bit PWM scale.
    pub fn strength_255(&self) -> u8 {
        libm::round(self.strength.clamp(0.0, 1.0) * 255.0) as u8
    }
}

/// One page of offsets sent to the controller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Page {
    pub index: usize,
    pub total: usize,
    pub offsets: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ReplayError {
    #[error("session is still live")]
    NotFinalized,
    #[error("session has zero duration")]
    ZeroDuration,
    #[error("schedule has no events")]
    NoEvents,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("page size must be >= 1")]
    InvalidPageSize,
    #[error("invalid vibration pulse: {0}")]
    InvalidPulse(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Compiles a finished session into a replay schedule.
///
/// Beats are the cumulative sums of the inter-beat intervals, starting at the
/// first interval, so a steady 60 BPM becomes exact 1000 ms spacing. Swings
/// are movement moments relative to `started_at`. Anything at or beyond the
/// session duration is dropped. A stretch series too short to segment yields
/// no swings rather than an error.
pub fn prepare_schedule(
    record: &SessionRecord,
    filter: &FilterParams,
    pelt: &PeltParams,
) -> Result<ReplaySchedule, ReplayError> {
    let ended_at = record.ended_at.ok_or(ReplayError::NotFinalized)?;
    let loop_period_ms = ended_at.saturating_sub(record.started_at);
    if loop_period_ms == 0 {
        return Err(ReplayError::ZeroDuration);
    }

    let mut beat_offsets_ms = Vec::new();
    if !record.bpm.is_empty() {
        let mut elapsed = 0.0f64;
        for ibi in signal::bpm_to_ibi(&record.bpm)? {
            elapsed += ibi.ibi_ms;
            let offset = libm::round(elapsed) as u64;
            if offset >= loop_period_ms {
                break;
            }
            if beat_offsets_ms.last().is_none_or(|&last| offset > last) {
                beat_offsets_ms.push(offset);
            }
        }
    }

    let swing_offsets_ms = match signal::movement_moments(&record.stretch, filter, pelt) {
        Ok(moments) => moments
            .into_iter()
            .map(|m| m.t.saturating_sub(record.started_at))
            .filter(|&o| o < loop_period_ms)
            .collect(),
        Err(SignalError::SeriesTooShort { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };

    Ok(ReplaySchedule {
        source_session: record.id.clone(),
        beat_offsets_ms,
        swing_offsets_ms,
        loop_period_ms,
    })
}

impl ReplaySchedule {
    /// Checks the invariants `prepare_schedule` guarantees, for schedules
    /// that arrive from elsewhere (seed files).
    pub fn validate(&self) -> Result<(), ReplayError> {
        if self.loop_period_ms == 0 {
            return Err(ReplayError::ZeroDuration);
        }
        for offsets in [&self.beat_offsets_ms, &self.swing_offsets_ms] {
            if offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ReplayError::InvalidSchedule("offsets must be strictly increasing"));
            }
            if offsets.last().is_some_and(|&o| o >= self.loop_period_ms) {
                return Err(ReplayError::InvalidSchedule("offsets must be below the loop period"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.beat_offsets_ms.is_empty() && self.swing_offsets_ms.is_empty()
    }

    /// First event of `kind` whose fire time is `>= elapsed_ms`.
    fn first_at_or_after(&self, kind: EventKind, elapsed_ms: u64) -> Option<PlaybackEvent> {
        let offsets = match kind {
            EventKind::Beat => &self.beat_offsets_ms,
            EventKind::Swing => &self.swing_offsets_ms,
        };
        let first = *offsets.first()?;
        let period = self.loop_period_ms;
        let loop_index = elapsed_ms / period;
        let rem = elapsed_ms % period;
        let pos = offsets.partition_point(|&o| o < rem);
        Some(match offsets.get(pos) {
            Some(&offset_ms) => PlaybackEvent {
                kind,
                offset_ms,
                loop_index,
            },
            None => PlaybackEvent {
                kind,
                offset_ms: first,
                loop_index: loop_index + 1,
            },
        })
    }

    /// All events firing at or after `elapsed_ms`, in fire order. Infinite
    /// unless the schedule is empty.
    pub fn events_from(&self, elapsed_ms: u64) -> Events<'_> {
        Events {
            schedule: self,
            beat: self.first_at_or_after(EventKind::Beat, elapsed_ms),
            swing: self.first_at_or_after(EventKind::Swing, elapsed_ms),
        }
    }
}

/// Iterator returned by [`ReplaySchedule::events_from`].
pub struct Events<'a> {
    schedule: &'a ReplaySchedule,
    beat: Option<PlaybackEvent>,
    swing: Option<PlaybackEvent>,
}

impl Iterator for Events<'_> {
    type Item = PlaybackEvent;

    fn next(&mut self) -> Option<PlaybackEvent> {
        let period = self.schedule.loop_period_ms;
        let take_swing = match (&self.swing, &self.beat) {
            (None, None) => return None,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(s), Some(b)) => s.at(period) <= b.at(period),
        };
        let slot = if take_swing { &mut self.swing } else { &mut self.beat };
        let ev = slot.take()?;
        *slot = self.schedule.first_at_or_after(ev.kind, ev.at(period) + 1);
        Some(ev)
    }
}

/// The earliest event at or after `elapsed_ms`, looping the schedule.
///
/// Stateless: the answer depends only on the schedule and `elapsed_ms`, so
/// playback can resume from any point.
pub fn next_event(schedule: &ReplaySchedule, elapsed_ms: u64) -> Result<NextEvent, ReplayError> {
    if schedule.loop_period_ms == 0 {
        return Err(ReplayError::ZeroDuration);
    }
    let event = schedule
        .events_from(elapsed_ms)
        .next()
        .ok_or(ReplayError::NoEvents)?;
    let at = event.at(schedule.loop_period_ms);
    Ok(if at == elapsed_ms {
        NextEvent::Fire(event)
    } else {
        NextEvent::Idle {
            until_ms: at - elapsed_ms,
            event,
        }
    })
}

/// Splits sorted offsets into pages of `page_size`; only the last page may be
/// shorter. No offsets means no pages.
pub fn paginate(offsets: &[u64], page_size: usize) -> Result<Vec<Page>, ReplayError> {
    if page_size == 0 {
        return Err(ReplayError::InvalidPageSize);
    }
    let total = offsets.len().div_ceil(page_size);
    Ok(offsets
        .chunks(page_size)
        .enumerate()
        .map(|(index, chunk)| Page {
            index,
            total,
            offsets: chunk.to_vec(),
        })
        .collect())
}
