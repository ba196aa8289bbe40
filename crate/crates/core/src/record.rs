use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::EpochMs;
use crate::signal::{BpmSample, StretchSample};

/// Opaque identifier of one occupancy session.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        Self(s.into())
    }
}

/// One occupant's recorded trace.
///
/// `ended_at` is `None` while the session is live. Once set, every sample
/// timestamp lies in `[started_at, ended_at]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: SessionId,
    pub started_at: EpochMs,
    pub ended_at: Option<EpochMs>,
    pub bpm: alloc::vec::Vec<BpmSample>,
    pub stretch: alloc::vec::Vec<StretchSample>,
}

impl SessionRecord {
    pub fn new(id: SessionId, started_at: EpochMs) -> Self {
        Self {
            id,
            started_at,
            ended_at: None,
            bpm: alloc::vec::Vec::new(),
            stretch: alloc::vec::Vec::new(),
        }
    }

    pub fn is_live(&self) -> bool {
        self.ended_at.is_none()
    }

    /// Duration in ms, `None` while live.
    pub fn duration_ms(&self) -> Option<u64> {
        self.ended_at.map(|end| end.saturating_sub(self.started_at))
    }
}
