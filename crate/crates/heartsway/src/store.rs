//! On-disk trace store.
//!
//! Layout under the data directory:
//!
//! ```text
//! LOCK                       held for the lifetime of the store
//! prepared.json              the single prepared trace, replaced atomically
//! purged.txt                 ids whose raw samples were deleted
//! sessions/<id>/meta.json    id, started_at, ended_at
//! sessions/<id>/bpm.csv      t_ms,bpm        (append-only)
//! sessions/<id>/stretch.csv  t_ms,stretch    (append-only)
//! ```
//!
//! Raw samples are kept for at most two sessions: the live one and the
//! predecessor whose schedule is pending or playing. Everything older is
//! deleted from disk, not tombstoned; only its id survives in `purged.txt`
//! so that lookups can tell "purged" from "never existed".

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use heartsway_core::replay::ReplaySchedule;
use heartsway_core::signal::{BpmSample, StretchSample};
use heartsway_core::{EpochMs, SessionId, SessionRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LOCK_FILE: &str = "LOCK";
const PREPARED_FILE: &str = "prepared.json";
const PURGED_FILE: &str = "purged.txt";
const SESSIONS_DIR: &str = "sessions";
const META_FILE: &str = "meta.json";
const BPM_FILE: &str = "bpm.csv";
const STRETCH_FILE: &str = "stretch.csv";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("data directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("a session is already live ({0})")]
    SessionAlreadyLive(SessionId),
    #[error("session {0} is not live")]
    SessionNotLive(SessionId),
    #[error("session {0} was purged")]
    SessionPurged(SessionId),
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("sample at t={t} is not after the last stored t={last}")]
    NonMonotonicTime { t: EpochMs, last: EpochMs },
    #[error("sample at t={t} precedes session start {started_at}")]
    BeforeStart { t: EpochMs, started_at: EpochMs },
    #[error("store is open read-only")]
    ReadOnly,
    #[error("prepared trace is already consumed")]
    AlreadyConsumed,
    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A schedule waiting for (or being played to) the next occupant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedTrace {
    pub source_session: SessionId,
    pub schedule: ReplaySchedule,
    pub prepared_at: EpochMs,
    pub consumed: bool,
}

impl PreparedTrace {
    pub fn new(schedule: ReplaySchedule, prepared_at: EpochMs) -> Self {
        Self {
            source_session: schedule.source_session.clone(),
            schedule,
            prepared_at,
            consumed: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    id: SessionId,
    started_at: EpochMs,
    ended_at: Option<EpochMs>,
}

/// Open file handles and cursors for the session being recorded.
#[derive(Debug)]
struct Live {
    meta: Meta,
    bpm: File,
    stretch: File,
    last_bpm: Option<EpochMs>,
    last_stretch: Option<EpochMs>,
}

/// Counts only; never the sample values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RetainedSession {
    pub id: SessionId,
    pub started_at: EpochMs,
    pub ended_at: Option<EpochMs>,
    pub bpm_samples: usize,
    pub stretch_samples: usize,
}

#[derive(Debug)]
pub struct TraceStore {
    root: PathBuf,
    /// `None` for read-only views.
    _lock: Option<File>,
    live: Option<Live>,
    purged: BTreeSet<SessionId>,
}

impl TraceStore {
    /// Opens (creating if needed) the store and takes its exclusive lock.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(SESSIONS_DIR))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let purged = read_purged(&root.join(PURGED_FILE))?;
        let mut store = Self {
            root,
            _lock: Some(lock),
            live: None,
            purged,
        };
        store.live = store.reopen_live()?;
        Ok(store)
    }

    /// A lock-free view for reading while a daemon owns the directory.
    /// Every mutating call fails with [`StoreError::ReadOnly`].
    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::metadata(root.join(SESSIONS_DIR))?;
        let purged = read_purged(&root.join(PURGED_FILE))?;
        Ok(Self {
            root,
            _lock: None,
            live: None,
            purged,
        })
    }

    fn writable(&self) -> Result<(), StoreError> {
        if self._lock.is_some() { Ok(()) } else { Err(StoreError::ReadOnly) }
    }

    /// The session without an end time, if any, as recorded on disk.
    pub fn unfinished_session(&self) -> Result<Option<SessionId>, StoreError> {
        for id in self.session_ids()? {
            if read_meta(&self.session_dir(&id))?.ended_at.is_none() {
                return Ok(Some(id));
            }
        }
        Ok(None)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &SessionId) -> PathBuf {
        self.root.join(SESSIONS_DIR).join(id.as_str())
    }

    pub fn live_session(&self) -> Option<&SessionId> {
        self.live.as_ref().map(|l| &l.meta.id)
    }

    pub fn begin_session(&mut self, now: EpochMs) -> Result<SessionId, StoreError> {
        self.writable()?;
        if let Some(live) = &self.live {
            return Err(StoreError::SessionAlreadyLive(live.meta.id.clone()));
        }
        let id = SessionId(uuid::Uuid::new_v4().simple().to_string());
        let dir = self.session_dir(&id);
        fs::create_dir_all(&dir)?;
        let meta = Meta {
            id: id.clone(),
            started_at: now,
            ended_at: None,
        };
        write_json_atomic(&dir.join(META_FILE), &meta)?;
        let bpm = open_append(&dir.join(BPM_FILE))?;
        let stretch = open_append(&dir.join(STRETCH_FILE))?;
        self.live = Some(Live {
            meta,
            bpm,
            stretch,
            last_bpm: None,
            last_stretch: None,
        });
        tracing::debug!(session = %id, started_at = now, "session begun");
        Ok(id)
    }

    fn live_mut(&mut self, id: &SessionId) -> Result<&mut Live, StoreError> {
        match &mut self.live {
            Some(live) if &live.meta.id == id => Ok(live),
            _ => Err(StoreError::SessionNotLive(id.clone())),
        }
    }

    /// Appends heart-rate samples; timestamps must strictly increase.
    pub fn append_bpm(&mut self, id: &SessionId, samples: &[BpmSample]) -> Result<usize, StoreError> {
        let live = self.live_mut(id)?;
        let mut last = live.last_bpm;
        check_times(samples.iter().map(|s| s.t), live.meta.started_at, &mut last)?;
        let mut buf = String::new();
        for s in samples {
            buf.push_str(&format!("{},{}\n", s.t, s.bpm));
        }
        live.bpm.write_all(buf.as_bytes())?;
        live.bpm.flush()?;
        live.last_bpm = last;
        Ok(samples.len())
    }

    /// Appends stretch samples; timestamps must strictly increase.
    pub fn append_stretch(
        &mut self,
        id: &SessionId,
        samples: &[StretchSample],
    ) -> Result<usize, StoreError> {
        let live = self.live_mut(id)?;
        let mut last = live.last_stretch;
        check_times(samples.iter().map(|s| s.t), live.meta.started_at, &mut last)?;
        let mut buf = String::new();
        for s in samples {
            buf.push_str(&format!("{},{}\n", s.t, s.value));
        }
        live.stretch.write_all(buf.as_bytes())?;
        live.stretch.flush()?;
        live.last_stretch = last;
        Ok(samples.len())
    }

    /// Closes the live session at `now` (clamped to its last sample) and
    /// deletes the raw samples of whatever trace it was played.
    pub fn finalize_session(&mut self, id: &SessionId, now: EpochMs) -> Result<SessionRecord, StoreError> {
        let live = self.live_mut(id)?;
        let last = live.last_bpm.max(live.last_stretch).unwrap_or(live.meta.started_at);
        let ended_at = now.max(last);
        let mut meta = live.meta.clone();
        meta.ended_at = Some(ended_at);
        live.bpm.sync_data()?;
        live.stretch.sync_data()?;
        let dir = self.session_dir(id);
        write_json_atomic(&dir.join(META_FILE), &meta)?;
        self.live = None;
        tracing::debug!(session = %id, ended_at, "session finalized");

        if let Some(prepared) = self.read_prepared()?
            && prepared.consumed
            && prepared.source_session != *id
        {
            self.purge(&prepared.source_session)?;
        }
        self.load_session(id)
    }

    /// Replaces the prepared trace. Every retained session other than the
    /// new trace's source and the live one is purged.
    pub fn install_prepared(&mut self, trace: &PreparedTrace) -> Result<(), StoreError> {
        self.writable()?;
        if trace.consumed {
            return Err(StoreError::AlreadyConsumed);
        }
        write_json_atomic(&self.root.join(PREPARED_FILE), trace)?;
        let keep_live = self.live_session().cloned();
        for id in self.session_ids()? {
            if id != trace.source_session && Some(&id) != keep_live.as_ref() {
                self.purge(&id)?;
            }
        }
        tracing::debug!(source = %trace.source_session, "prepared trace installed");
        Ok(())
    }

    /// Hands out the pending trace once; later calls return `None` until a
    /// new trace is installed.
    pub fn take_prepared(&mut self) -> Result<Option<PreparedTrace>, StoreError> {
        self.writable()?;
        let Some(mut trace) = self.read_prepared()? else {
            return Ok(None);
        };
        if trace.consumed {
            return Ok(None);
        }
        trace.consumed = true;
        write_json_atomic(&self.root.join(PREPARED_FILE), &trace)?;
        trace.consumed = false;
        Ok(Some(trace))
    }

    /// True when an unconsumed trace is waiting.
    pub fn has_pending(&self) -> Result<bool, StoreError> {
        Ok(self.read_prepared()?.is_some_and(|t| !t.consumed))
    }

    pub fn read_prepared(&self) -> Result<Option<PreparedTrace>, StoreError> {
        let path = self.root.join(PREPARED_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn is_purged(&self, id: &SessionId) -> bool {
        self.purged.contains(id)
    }

    /// Reads a retained session back in full.
    pub fn load_session(&self, id: &SessionId) -> Result<SessionRecord, StoreError> {
        if self.is_purged(id) {
            return Err(StoreError::SessionPurged(id.clone()));
        }
        let dir = self.session_dir(id);
        let meta = match read_meta(&dir) {
            Ok(m) => m,
            Err(StoreError::Io(e)) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::SessionNotFound(id.clone()));
            }
            Err(e) => return Err(e),
        };
        let bpm = read_pairs(&dir.join(BPM_FILE))?
            .into_iter()
            .map(|(t, bpm)| BpmSample::new(t, bpm))
            .collect();
        let stretch = read_pairs(&dir.join(STRETCH_FILE))?
            .into_iter()
            .map(|(t, value)| StretchSample::new(t, value))
            .collect();
        Ok(SessionRecord {
            id: meta.id,
            started_at: meta.started_at,
            ended_at: meta.ended_at,
            bpm,
            stretch,
        })
    }

    /// Ids of sessions whose raw samples are still on disk, oldest first.
    pub fn session_ids(&self) -> Result<Vec<SessionId>, StoreError> {
        let mut metas = Vec::new();
        for entry in fs::read_dir(self.root.join(SESSIONS_DIR))? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            match read_meta(&entry.path()) {
                Ok(meta) => metas.push(meta),
                // A directory left behind by an interrupted purge or begin.
                Err(StoreError::Io(e)) if e.kind() == io::ErrorKind::NotFound => {
                    if self._lock.is_some() {
                        fs::remove_dir_all(entry.path())?;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        metas.sort_by(|a, b| (a.started_at, &a.id).cmp(&(b.started_at, &b.id)));
        Ok(metas.into_iter().map(|m| m.id).collect())
    }

    pub fn retained(&self) -> Result<Vec<RetainedSession>, StoreError> {
        self.session_ids()?
            .into_iter()
            .map(|id| {
                let r = self.load_session(&id)?;
                Ok(RetainedSession {
                    id,
                    started_at: r.started_at,
                    ended_at: r.ended_at,
                    bpm_samples: r.bpm.len(),
                    stretch_samples: r.stretch.len(),
                })
            })
            .collect()
    }

    /// The most recent finished session, if still retained.
    pub fn predecessor(&self) -> Result<Option<SessionId>, StoreError> {
        let live = self.live_session().cloned();
        Ok(self
            .session_ids()?
            .into_iter()
            .rev()
            .find(|id| Some(id) != live.as_ref()))
    }

    /// Closes a session left live by a crash at its last sample. Returns
    /// the closed record so the caller can prepare it.
    pub fn recover(&mut self) -> Result<Option<SessionRecord>, StoreError> {
        let Some(live) = &self.live else {
            return Ok(None);
        };
        let id = live.meta.id.clone();
        let last = live.last_bpm.max(live.last_stretch).unwrap_or(live.meta.started_at);
        tracing::info!(session = %id, ended_at = last, "recovering interrupted session");
        self.finalize_session(&id, last).map(Some)
    }

    fn purge(&mut self, id: &SessionId) -> Result<(), StoreError> {
        self.writable()?;
        if self.purged.insert(id.clone()) {
            let mut f = open_append(&self.root.join(PURGED_FILE))?;
            writeln!(f, "{id}")?;
            f.sync_data()?;
        }
        let dir = self.session_dir(id);
        match fs::remove_dir_all(&dir) {
            Ok(()) => tracing::info!(session = %id, "raw samples purged"),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn reopen_live(&self) -> Result<Option<Live>, StoreError> {
        for id in self.session_ids()? {
            let dir = self.session_dir(&id);
            let meta = read_meta(&dir)?;
            if meta.ended_at.is_some() {
                continue;
            }
            let last = |name| -> Result<Option<EpochMs>, StoreError> {
                Ok(read_pairs(&dir.join(name))?.last().map(|&(t, _)| t))
            };
            repair_tail(&dir.join(BPM_FILE))?;
            repair_tail(&dir.join(STRETCH_FILE))?;
            let last_bpm = last(BPM_FILE)?;
            let last_stretch = last(STRETCH_FILE)?;
            return Ok(Some(Live {
                bpm: open_append(&dir.join(BPM_FILE))?,
                stretch: open_append(&dir.join(STRETCH_FILE))?,
                meta,
                last_bpm,
                last_stretch,
            }));
        }
        Ok(None)
    }
}

fn check_times(
    ts: impl Iterator<Item = EpochMs>,
    started_at: EpochMs,
    last: &mut Option<EpochMs>,
) -> Result<(), StoreError> {
    for t in ts {
        if t < started_at {
            return Err(StoreError::BeforeStart { t, started_at });
        }
        if let Some(l) = *last
            && t <= l
        {
            return Err(StoreError::NonMonotonicTime { t, last: l });
        }
        *last = Some(t);
    }
    Ok(())
}

fn corrupt(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt {
        path: path.to_owned(),
        reason: e.to_string(),
    }
}

fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value).map_err(|e| corrupt(path, e))?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(())
}

/// Cuts a torn final line so later appends start on a fresh line.
fn repair_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn read_meta(dir: &Path) -> Result<Meta, StoreError> {
    let path = dir.join(META_FILE);
    let bytes = fs::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e))
}

fn read_purged(path: &Path) -> Result<BTreeSet<SessionId>, StoreError> {
    match File::open(path) {
        Ok(f) => {
            let mut out = BTreeSet::new();
            for line in BufReader::new(f).lines() {
                let line = line?;
                let line = line.trim();
                if !line.is_empty() {
                    out.insert(SessionId(line.to_owned()));
                }
            }
            Ok(out)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(BTreeSet::new()),
        Err(e) => Err(e.into()),
    }
}

/// Reads `t,value` lines. A torn final line (crash mid-append) is dropped.
fn read_pairs(path: &Path) -> Result<Vec<(EpochMs, f64)>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let parsed = line
            .split_once(',')
            .and_then(|(t, v)| Some((t.parse::<EpochMs>().ok()?, v.parse::<f64>().ok()?)));
        match parsed {
            Some(p) => out.push(p),
            None if i + 1 == lines.len() && !complete => break,
            None => return Err(corrupt(path, format!("line {}: {line:?}", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(id: &SessionId) -> ReplaySchedule {
        ReplaySchedule {
            source_session: id.clone(),
            beat_offsets_ms: vec![1000, 2000],
            swing_offsets_ms: vec![1500],
            loop_period_ms: 3000,
        }
    }

    #[test]
    fn begin_twice_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let id = store.begin_session(1000).unwrap();
        assert!(matches!(
            store.begin_session(2000),
            Err(StoreError::SessionAlreadyLive(live)) if live == id
        ));
    }

    #[test]
    fn sequential_sessions_get_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let a = store.begin_session(0).unwrap();
        store.finalize_session(&a, 10).unwrap();
        let b = store.begin_session(20).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn append_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let id = store.begin_session(1000).unwrap();
        let s = [
            BpmSample::new(1000, 60.0),
            BpmSample::new(2000, 61.5),
            BpmSample::new(3000, 62.0),
        ];
        assert_eq!(store.append_bpm(&id, &s).unwrap(), 3);
        assert!(matches!(
            store.append_bpm(&id, &[BpmSample::new(2500, 60.0)]),
            Err(StoreError::NonMonotonicTime { t: 2500, last: 3000 })
        ));
        // A rejected batch leaves nothing behind.
        assert!(store
            .append_stretch(&id, &[StretchSample::new(1000, 1.0), StretchSample::new(1000, 2.0)])
            .is_err());
        assert_eq!(store.load_session(&id).unwrap().stretch.len(), 0);

        store.finalize_session(&id, 601_000).unwrap();
        assert!(matches!(
            store.append_bpm(&id, &[BpmSample::new(700_000, 60.0)]),
            Err(StoreError::SessionNotLive(_))
        ));
    }

    #[test]
    fn finalize_records_duration_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let id = store.begin_session(1000).unwrap();
        let rec = store.finalize_session(&id, 601_000).unwrap();
        assert_eq!(rec.duration_ms(), Some(600_000));
        assert!(rec.bpm.is_empty() && rec.stretch.is_empty());
        assert!(matches!(
            store.finalize_session(&id, 602_000),
            Err(StoreError::SessionNotLive(_))
        ));
    }

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let id = store.begin_session(0).unwrap();
        let bpm = [BpmSample::new(0, 72.123456789), BpmSample::new(1000, 0.1 + 0.2)];
        store.append_bpm(&id, &bpm).unwrap();
        let rec = store.finalize_session(&id, 2000).unwrap();
        assert_eq!(rec.bpm, bpm);
    }

    #[test]
    fn take_prepared_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        assert_eq!(store.take_prepared().unwrap(), None);
        let a = store.begin_session(0).unwrap();
        store.finalize_session(&a, 3000).unwrap();
        let trace = PreparedTrace::new(schedule(&a), 3001);
        store.install_prepared(&trace).unwrap();
        assert!(store.has_pending().unwrap());
        assert_eq!(store.take_prepared().unwrap(), Some(trace));
        assert_eq!(store.take_prepared().unwrap(), None);
        assert!(!store.has_pending().unwrap());
    }

    #[test]
    fn install_replaces_and_purges_source() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let a = store.begin_session(0).unwrap();
        store.finalize_session(&a, 3000).unwrap();
        store.install_prepared(&PreparedTrace::new(schedule(&a), 3001)).unwrap();
        let b = store.begin_session(4000).unwrap();
        store.finalize_session(&b, 7000).unwrap();
        let t2 = PreparedTrace::new(schedule(&b), 7001);
        store.install_prepared(&t2).unwrap();
        assert_eq!(store.read_prepared().unwrap(), Some(t2));
        assert!(matches!(store.load_session(&a), Err(StoreError::SessionPurged(_))));
        assert!(!dir.path().join(SESSIONS_DIR).join(a.as_str()).exists());
        assert_eq!(store.session_ids().unwrap(), vec![b]);
    }

    #[test]
    fn consumed_source_is_purged_when_consumer_ends() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let a = store.begin_session(0).unwrap();
        store.finalize_session(&a, 3000).unwrap();
        store.install_prepared(&PreparedTrace::new(schedule(&a), 3001)).unwrap();
        let b = store.begin_session(4000).unwrap();
        store.take_prepared().unwrap().unwrap();
        // Still playing: both live and predecessor retained.
        assert_eq!(store.session_ids().unwrap().len(), 2);
        store.finalize_session(&b, 9000).unwrap();
        assert!(store.is_purged(&a));
        assert_eq!(store.session_ids().unwrap(), vec![b]);
    }

    #[test]
    fn unknown_session() {
        let dir = tempfile::tempdir().unwrap();
        let store = TraceStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.load_session(&SessionId::from("nope")),
            Err(StoreError::SessionNotFound(_))
        ));
    }

    #[test]
    fn second_open_is_locked() {
        let dir = tempfile::tempdir().unwrap();
        let _first = TraceStore::open(dir.path()).unwrap();
        assert!(matches!(TraceStore::open(dir.path()), Err(StoreError::Locked(_))));
    }

    #[test]
    fn read_only_view_reads_but_never_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = TraceStore::open(dir.path()).unwrap();
        let id = store.begin_session(0).unwrap();
        store.append_bpm(&id, &[BpmSample::new(0, 60.0)]).unwrap();
        let mut view = TraceStore::open_read_only(dir.path()).unwrap();
        assert_eq!(view.unfinished_session().unwrap(), Some(id.clone()));
        assert_eq!(view.load_session(&id).unwrap().bpm.len(), 1);
        assert!(matches!(view.begin_session(5), Err(StoreError::ReadOnly)));
        assert!(matches!(view.take_prepared(), Err(StoreError::ReadOnly)));
        assert!(TraceStore::open_read_only(dir.path().join("missing")).is_err());
    }

    #[test]
    fn recovery_closes_at_last_sample() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let mut store = TraceStore::open(dir.path()).unwrap();
            let id = store.begin_session(1000).unwrap();
            store.append_bpm(&id, &[BpmSample::new(1000, 60.0), BpmSample::new(5000, 60.0)]).unwrap();
            store.append_stretch(&id, &[StretchSample::new(7000, 3.0)]).unwrap();
            id
        };
        // Simulate a torn write.
        let mut f = open_append(&dir.path().join(SESSIONS_DIR).join(id.as_str()).join(BPM_FILE)).unwrap();
        f.write_all(b"90").unwrap();
        drop(f);

        let mut store = TraceStore::open(dir.path()).unwrap();
        assert_eq!(store.live_session(), Some(&id));
        store.append_bpm(&id, &[BpmSample::new(6000, 61.0)]).unwrap();
        let rec = store.recover().unwrap().unwrap();
        assert_eq!(rec.ended_at, Some(7000));
        assert_eq!(rec.bpm.len(), 3);
        assert_eq!(rec.bpm[2], BpmSample::new(6000, 61.0));
        assert_eq!(store.live_session(), None);
        assert_eq!(store.recover().unwrap(), None);
    }
}
