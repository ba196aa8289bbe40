//! Wizard-of-Oz swing cues. When the actuator is replaced by a person pulling
//! the string, each swing event becomes a cue shown ahead of time.

use serde::{Deserialize, Serialize};

use crate::EpochMs;
use crate::replay::ReplaySchedule;

pub const DEFAULT_LEAD_MS: u64 = 3000;
pub const DEFAULT_LATE_TOLERANCE_MS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CueKind {
    Swing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WozCue {
    /// Position within its replay; the engine assigns global ids.
    pub ordinal: u64,
    pub kind: CueKind,
    /// When the operator should be told.
    pub issue_at: EpochMs,
    pub due_at: EpochMs,
    pub acknowledged: bool,
    pub late_by_ms: Option<u64>,
}

impl WozCue {
    /// Records the operator's acknowledgement at `now`. Acks more than
    /// `tolerance_ms` after `due_at` are late.
    pub fn acknowledge(&mut self, now: EpochMs, tolerance_ms: u64) {
        self.acknowledged = true;
        self.late_by_ms = (now > self.due_at + tolerance_ms).then(|| now - self.due_at);
    }

    /// Marks an unacknowledged cue late once its window has closed. Returns
    /// true on the first call that does so.
    pub fn expire(&mut self, now: EpochMs, tolerance_ms: u64) -> bool {
        if self.acknowledged || self.late_by_ms.is_some() || now <= self.due_at + tolerance_ms {
            return false;
        }
        self.late_by_ms = Some(now - self.due_at);
        true
    }
}

/// One cue per swing event, looping with the schedule, issued `lead_ms`
/// before it is due (or at replay start if that is later). Infinite unless
/// the schedule has no swings; the caller bounds it by occupancy end.
pub fn woz_cues(
    schedule: &ReplaySchedule,
    replay_start: EpochMs,
    lead_ms: u64,
) -> impl Iterator<Item = WozCue> + '_ {
    let period = schedule.loop_period_ms;
    let swings = &schedule.swing_offsets_ms;
    (0u64..)
        .take_while(move |_| !swings.is_empty())
        .flat_map(move |loop_index| swings.iter().map(move |&o| loop_index * period + o))
        .enumerate()
        .map(move |(ordinal, at)| {
            let due_at = replay_start + at;
            WozCue {
                ordinal: ordinal as u64,
                kind: CueKind::Swing,
                issue_at: due_at.saturating_sub(lead_ms).max(replay_start),
                due_at,
                acknowledged: false,
                late_by_ms: None,
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn sched() -> ReplaySchedule {
        ReplaySchedule {
            source_session: "a".into(),
            beat_offsets_ms: vec![500, 1000, 1500],
            swing_offsets_ms: vec![60_000],
            loop_period_ms: 120_000,
        }
    }

    #[test]
    fn cues_follow_swings_across_loops() {
        let s = sched();
        let start = 1_000_000;
        let cues: Vec<_> = woz_cues(&s, start, DEFAULT_LEAD_MS)
            .take_while(|c| c.due_at < start + 180_000 + 1)
            .collect();
        let due: Vec<_> = cues.iter().map(|c| c.due_at - start).collect();
        assert_eq!(due, vec![60_000, 180_000]);
        assert!(cues.iter().all(|c| c.due_at - c.issue_at == 3000));
        assert_eq!(cues[1].ordinal, 1);
    }

    #[test]
    fn early_swing_is_issued_at_replay_start() {
        let mut s = sched();
        s.swing_offsets_ms = vec![1000];
        let c = woz_cues(&s, 50_000, 3000).next().unwrap();
        assert_eq!(c.issue_at, 50_000);
    }

    #[test]
    fn no_swings_no_cues() {
        let mut s = sched();
        s.swing_offsets_ms.clear();
        assert_eq!(woz_cues(&s, 0, 3000).next(), None);
    }

    #[test]
    fn ack_within_tolerance_is_on_time() {
        let mut c = woz_cues(&sched(), 0, 3000).next().unwrap();
        c.acknowledge(c.due_at + 400, DEFAULT_LATE_TOLERANCE_MS);
        assert!(c.acknowledged);
        assert_eq!(c.late_by_ms, None);
        assert!(!c.expire(c.due_at + 5000, DEFAULT_LATE_TOLERANCE_MS));
    }

    #[test]
    fn missing_ack_is_late() {
        let mut c = woz_cues(&sched(), 0, 3000).next().unwrap();
        assert!(!c.expire(c.due_at + 1000, 1000));
        assert!(c.expire(c.due_at + 1001, 1000));
        assert_eq!(c.late_by_ms, Some(1001));
        assert!(!c.expire(c.due_at + 2000, 1000));
        let mut d = woz_cues(&sched(), 0, 3000).next().unwrap();
        d.acknowledge(d.due_at + 2500, 1000);
        assert_eq!(d.late_by_ms, Some(2500));
    }
}
