//! Engine event log: a bounded ring of numbered events that subscribers
//! read from any retained sequence number and then tail.

use std::collections::VecDeque;
use std::sync::{Mutex, MutexGuard};

use heartsway_core::EpochMs;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub const RING_CAPACITY: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PhaseChanged,
    PresenceChanged,
    BeatFired,
    SwingFired,
    CueIssued,
    CueAcked,
    CueMissed,
    PagesSent,
    Command,
    Error,
    /// Synthetic: the subscriber asked for events that were evicted.
    GapNotice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    pub t: EpochMs,
    pub kind: EventKind,
    pub detail: serde_json::Value,
}

#[derive(Debug)]
struct Ring {
    events: VecDeque<ApiEvent>,
    next_seq: u64,
}

#[derive(Debug)]
pub struct EventBus {
    ring: Mutex<Ring>,
    capacity: usize,
    latest: watch::Sender<u64>,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::with_capacity(RING_CAPACITY)
    }
}

impl EventBus {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            ring: Mutex::new(Ring {
                events: VecDeque::with_capacity(capacity.min(RING_CAPACITY)),
                next_seq: 1,
            }),
            capacity: capacity.max(1),
            latest: watch::Sender::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Ring> {
        self.ring.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn publish(&self, t: EpochMs, kind: EventKind, detail: serde_json::Value) -> u64 {
        let seq = {
            let mut ring = self.lock();
            let seq = ring.next_seq;
            ring.next_seq += 1;
            if ring.events.len() == self.capacity {
                ring.events.pop_front();
            }
            tracing::info!(target: "heartsway::event", seq, t, kind = ?kind, detail = %detail);
            ring.events.push_back(ApiEvent { seq, t, kind, detail });
            seq
        };
        self.latest.send_replace(seq);
        seq
    }

    /// Sequence number of the newest event, 0 if none yet.
    pub fn last_seq(&self) -> u64 {
        self.lock().next_seq - 1
    }

    /// Retained events with `seq >= from_seq`. If some of those were already
    /// evicted, a [`EventKind::GapNotice`] comes first.
    pub fn since(&self, from_seq: u64) -> Vec<ApiEvent> {
        let ring = self.lock();
        let from_seq = from_seq.max(1);
        let mut out = Vec::new();
        if let Some(oldest) = ring.events.front()
            && from_seq < oldest.seq
        {
            out.push(ApiEvent {
                seq: oldest.seq - 1,
                t: oldest.t,
                kind: EventKind::GapNotice,
                detail: serde_json::json!({ "requested_from": from_seq, "first_available": oldest.seq }),
            });
        }
        let start = ring.events.partition_point(|e| e.seq < from_seq);
        out.extend(ring.events.range(start..).cloned());
        out
    }

    /// Receiver that changes whenever an event is published.
    pub fn watch(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }
}
