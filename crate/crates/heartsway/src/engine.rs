//! The session orchestrator.
//!
//! A single event loop owns the store and the backend. Time is always passed
//! in: [`Engine::step`] does everything due at or before `now`, and
//! [`Engine::next_deadline`] says when to call it next. Drivers decide where
//! `now` comes from (see [`crate::driver`]).

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use heartsway_core::cue::{WozCue, woz_cues};
use heartsway_core::presence::{PresenceState, PresenceTracker};
use heartsway_core::replay::{self, EventKind as PlaybackKind, PlaybackEvent, ReplayError, ReplaySchedule};
use heartsway_core::wire::{self, WireError};
use heartsway_core::{EpochMs, SessionId, SessionRecord};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::config::EngineConfig;
use crate::device::{Actuation, Backend, DeviceError};
use crate::events::{EventBus, EventKind};
use crate::store::{PreparedTrace, StoreError, TraceStore};

/// Resolved cues kept so a late acknowledgement can still be matched.
const RESOLVED_CUES_KEPT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Occupied,
    Preparing,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("seed trace {path}: {reason}")]
    SeedTrace { path: PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Command {
    AckCue { id: u64 },
    /// `state: null` clears the override.
    OverridePresence { state: Option<PresenceState> },
    LoadSeedTrace { path: PathBuf },
    Shutdown,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::AckCue { .. } => "AckCue",
            Self::OverridePresence { .. } => "OverridePresence",
            Self::LoadSeedTrace { .. } => "LoadSeedTrace",
            Self::Shutdown => "Shutdown",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error")]
pub enum CommandError {
    #[error("unknown cue {id}")]
    UnknownCue { id: u64 },
    #[error("{command} is not allowed while {phase:?}")]
    InvalidPhase { command: &'static str, phase: Phase },
    #[error("seed trace rejected: {reason}")]
    SeedTrace { reason: String },
    #[error("engine is not running")]
    EngineUnavailable,
}

pub type CommandReply = Result<Value, CommandError>;

pub(crate) enum Inbound {
    Command {
        cmd: Command,
        reply: Option<oneshot::Sender<CommandReply>>,
    },
    Prepared {
        session: SessionId,
        result: Result<ReplaySchedule, ReplayError>,
    },
}

// Status document --------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: SessionId,
    pub started_at: EpochMs,
    pub duration_ms: u64,
    pub bpm_samples: usize,
    pub stretch_samples: usize,
    /// Set while the occupant is briefly away and may still return.
    pub away_since: Option<EpochMs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextEventStatus {
    pub kind: PlaybackKind,
    pub offset_ms: u64,
    pub loop_index: u64,
    pub in_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayStatus {
    pub source_session: SessionId,
    pub started_at: EpochMs,
    pub loop_period_ms: u64,
    pub elapsed_ms: u64,
    pub loop_index: u64,
    pub beats_per_loop: usize,
    pub swings_per_loop: usize,
    pub beats_fired: u64,
    pub swings_fired: u64,
    pub next_event: Option<NextEventStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CueStatus {
    pub id: u64,
    #[serde(flatten)]
    pub cue: WozCue,
}

/// What the API reports. Counts and timings only, never sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of: EpochMs,
    pub phase: Phase,
    pub presence: PresenceState,
    pub presence_override: Option<PresenceState>,
    pub woz_mode: bool,
    pub session: Option<SessionStatus>,
    pub preparing: Option<SessionId>,
    pub replay: Option<ReplayStatus>,
    pub prepared: bool,
    pub pending_cues: Vec<CueStatus>,
}

impl Snapshot {
    fn initial(woz_mode: bool) -> Self {
        Self {
            as_of: 0,
            phase: Phase::Idle,
            presence: PresenceState::Vacant,
            presence_override: None,
            woz_mode,
            session: None,
            preparing: None,
            replay: None,
            prepared: false,
            pending_cues: Vec::new(),
        }
    }
}

// Engine state -----------------------------------------------------------

#[derive(Debug)]
struct LiveSession {
    id: SessionId,
    started_at: EpochMs,
    bpm_samples: usize,
    stretch_samples: usize,
    last_bpm_t: Option<EpochMs>,
    last_stretch_t: Option<EpochMs>,
    next_sample: EpochMs,
    away_since: Option<EpochMs>,
}

impl LiveSession {
    fn last_sample_t(&self) -> EpochMs {
        self.last_bpm_t.max(self.last_stretch_t).unwrap_or(self.started_at)
    }
}

#[derive(Debug)]
struct Replay {
    schedule: ReplaySchedule,
    start: EpochMs,
    /// Elapsed time of the last fired event (or of a resume point).
    cursor: u64,
    /// Kinds already fired exactly at `cursor`.
    fired_at_cursor: Vec<PlaybackKind>,
    beats_fired: u64,
    swings_fired: u64,
    next_cue: usize,
}

impl Replay {
    fn upcoming(&self) -> Option<PlaybackEvent> {
        let period = self.schedule.loop_period_ms;
        self.schedule
            .events_from(self.cursor)
            .find(|e| !(e.at(period) == self.cursor && self.fired_at_cursor.contains(&e.kind)))
    }

    fn mark_fired(&mut self, ev: &PlaybackEvent) {
        let at = ev.at(self.schedule.loop_period_ms);
        if at != self.cursor {
            self.cursor = at;
            self.fired_at_cursor.clear();
        }
        self.fired_at_cursor.push(ev.kind);
    }

    fn cue(&self, ordinal: usize, lead_ms: u64) -> Option<WozCue> {
        woz_cues(&self.schedule, self.start, lead_ms).nth(ordinal)
    }
}

#[derive(Clone, Debug)]
struct TrackedCue {
    id: u64,
    cue: WozCue,
}

pub struct Engine {
    cfg: EngineConfig,
    store: TraceStore,
    backend: Box<dyn Backend>,
    bus: Arc<EventBus>,
    snapshot: Arc<RwLock<Snapshot>>,
    tx: Sender<Inbound>,
    rx: Receiver<Inbound>,
    stash: VecDeque<Inbound>,

    now: EpochMs,
    phase: Phase,
    presence: PresenceTracker,
    presence_override: Option<PresenceState>,
    /// After an auto-finalize the occupant must leave before a new session.
    await_vacancy: bool,
    next_poll: EpochMs,
    session: Option<LiveSession>,
    preparing: Option<SessionId>,
    prepared_pending: bool,
    replay: Option<Replay>,
    pending_cues: Vec<TrackedCue>,
    resolved_cues: VecDeque<TrackedCue>,
    next_cue_id: u64,
    shutdown_requested: bool,
    stopped: bool,
    running: Arc<AtomicBool>,
}

/// Cheap, cloneable access to a running engine from other threads.
#[derive(Clone)]
pub struct EngineHandle {
    tx: Sender<Inbound>,
    snapshot: Arc<RwLock<Snapshot>>,
    bus: Arc<EventBus>,
    running: Arc<AtomicBool>,
}

impl EngineHandle {
    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    /// Queues a command; the receiver resolves once the engine handled it.
    pub fn send(&self, cmd: Command) -> Result<oneshot::Receiver<CommandReply>, CommandError> {
        if !self.is_running() {
            return Err(CommandError::EngineUnavailable);
        }
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Inbound::Command { cmd, reply: Some(reply) })
            .map_err(|_| CommandError::EngineUnavailable)?;
        Ok(rx)
    }

    /// Sends and waits. Must not be called from the engine's own thread.
    pub fn command_blocking(&self, cmd: Command) -> CommandReply {
        self.send(cmd)?
            .blocking_recv()
            .unwrap_or(Err(CommandError::EngineUnavailable))
    }

    pub async fn command(&self, cmd: Command) -> CommandReply {
        self.send(cmd)?.await.unwrap_or(Err(CommandError::EngineUnavailable))
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }
}

impl Engine {
    /// Builds the engine at time `now`: recovers an interrupted session,
    /// and installs the configured seed trace if nothing is pending.
    pub fn new(
        cfg: EngineConfig,
        mut store: TraceStore,
        backend: Box<dyn Backend>,
        bus: Arc<EventBus>,
        now: EpochMs,
    ) -> Result<Self, EngineError> {
        if let Some(record) = store.recover()? {
            bus.publish(now, EventKind::PhaseChanged, json!({
                "from": Phase::Preparing, "to": Phase::Preparing, "session": record.id, "recovered": true,
            }));
            match prepare(&cfg, &record) {
                Ok(schedule) => store.install_prepared(&PreparedTrace::new(schedule, now))?,
                Err(e) => {
                    tracing::warn!(session = %record.id, error = %e, "recovered session not replayable");
                }
            }
        }
        let prepared_pending = store.has_pending()?;
        let (tx, rx) = mpsc::channel();
        let mut engine = Self {
            snapshot: Arc::new(RwLock::new(Snapshot::initial(cfg.woz_mode))),
            next_poll: now,
            cfg,
            store,
            backend,
            bus,
            tx,
            rx,
            stash: VecDeque::new(),
            now,
            phase: Phase::Idle,
            presence: PresenceTracker::default(),
            presence_override: None,
            await_vacancy: false,
            session: None,
            preparing: None,
            prepared_pending,
            replay: None,
            pending_cues: Vec::new(),
            resolved_cues: VecDeque::new(),
            next_cue_id: 1,
            shutdown_requested: false,
            stopped: false,
            running: Arc::new(AtomicBool::new(true)),
        };
        if !engine.prepared_pending
            && let Some(path) = engine.cfg.seed_trace.clone()
        {
            engine.install_seed(&path, now)?;
        }
        engine.publish_snapshot();
        Ok(engine)
    }

    pub fn handle(&self) -> EngineHandle {
        EngineHandle {
            tx: self.tx.clone(),
            snapshot: self.snapshot.clone(),
            bus: self.bus.clone(),
            running: self.running.clone(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn now(&self) -> EpochMs {
        self.now
    }

    pub fn store(&self) -> &TraceStore {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn shutdown_requested(&self) -> bool {
        self.shutdown_requested
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// True while a schedule is being computed on the worker.
    pub fn is_preparing(&self) -> bool {
        self.preparing.is_some()
    }

    fn emit(&self, kind: EventKind, detail: Value) {
        self.bus.publish(self.now, kind, detail);
    }

    fn set_phase(&mut self, to: Phase, detail: Value) {
        if self.phase == to {
            return;
        }
        let from = self.phase;
        self.phase = to;
        let mut d = json!({ "from": from, "to": to });
        if let (Value::Object(m), Value::Object(extra)) = (&mut d, detail) {
            m.extend(extra);
        }
        self.emit(EventKind::PhaseChanged, d);
    }

    /// Earliest time at which [`Engine::step`] has work to do.
    pub fn next_deadline(&self) -> EpochMs {
        let mut t = self.next_poll;
        let mut consider = |x: EpochMs| t = t.min(x);
        if let Some(s) = &self.session {
            match s.away_since {
                Some(away) => consider(away + self.cfg.session_merge_gap_ms),
                None => {
                    consider(s.next_sample);
                    consider(s.started_at + self.cfg.max_session_ms);
                }
            }
        }
        if self.phase == Phase::Occupied
            && let Some(r) = &self.replay
        {
            if let Some(ev) = r.upcoming() {
                consider(r.start + ev.at(r.schedule.loop_period_ms));
            }
            if self.cfg.woz_mode
                && let Some(c) = r.cue(r.next_cue, self.cfg.woz.lead_ms)
            {
                consider(c.issue_at);
            }
        }
        for c in &self.pending_cues {
            consider(c.cue.due_at + self.cfg.woz.late_tolerance_ms + 1);
        }
        t.max(self.now)
    }

    /// Does all work due at or before `now`. Presence comes first, so an
    /// occupant leaving at `t` receives nothing scheduled for `t`.
    pub fn step(&mut self, now: EpochMs) {
        if self.stopped {
            return;
        }
        self.now = self.now.max(now);
        self.drain_inbound();
        if self.shutdown_requested {
            self.publish_snapshot();
            return;
        }

        if self.now >= self.next_poll {
            self.poll_presence();
            let period = self.cfg.presence.poll_period_ms;
            while self.next_poll <= self.now {
                self.next_poll += period;
            }
        }
        self.check_lifecycle();
        if self.phase == Phase::Occupied {
            self.sample_sensors();
        }
        if self.phase == Phase::Occupied {
            self.run_replay();
        }
        self.expire_cues();
        self.publish_snapshot();
    }

    /// Blocks up to `timeout` for inbound work (commands or a finished
    /// preparation). Returns true if something arrived.
    pub fn wait_inbound(&mut self, timeout: Duration) -> bool {
        match self.rx.recv_timeout(timeout) {
            Ok(msg) => {
                self.stash.push_back(msg);
                true
            }
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => false,
        }
    }

    /// Blocks until the in-flight preparation (if any) has been handled.
    pub fn finish_preparation(&mut self) {
        while self.preparing.is_some() {
            let Ok(msg) = self.rx.recv() else { return };
            match msg {
                Inbound::Prepared { session, result } => self.on_prepared(session, result),
                other => self.stash.push_back(other),
            }
        }
        self.publish_snapshot();
    }

    /// Runs a command synchronously at the engine's current time.
    pub fn command(&mut self, cmd: Command) -> CommandReply {
        let name = cmd.name();
        let audit = serde_json::to_value(&cmd).unwrap_or(Value::Null);
        let result = self.apply_command(cmd);
        let outcome = match &result {
            Ok(_) => json!("accepted"),
            Err(e) => json!({ "rejected": e.to_string() }),
        };
        self.emit(EventKind::Command, json!({ "command": name, "args": audit, "outcome": outcome }));
        self.publish_snapshot();
        result
    }

    fn drain_inbound(&mut self) {
        while let Ok(msg) = self.rx.try_recv() {
            self.stash.push_back(msg);
        }
        while let Some(msg) = self.stash.pop_front() {
            match msg {
                Inbound::Command { cmd, reply } => {
                    let r = self.command(cmd);
                    if let Some(reply) = reply {
                        let _ = reply.send(r);
                    }
                }
                Inbound::Prepared { session, result } => self.on_prepared(session, result),
            }
        }
    }

    fn apply_command(&mut self, cmd: Command) -> CommandReply {
        match cmd {
            Command::AckCue { id } => self.ack_cue(id),
            Command::OverridePresence { state } => {
                self.presence_override = state;
                Ok(json!({ "presence_override": state }))
            }
            Command::LoadSeedTrace { path } => {
                if self.phase != Phase::Idle {
                    return Err(CommandError::InvalidPhase {
                        command: "LoadSeedTrace",
                        phase: self.phase,
                    });
                }
                let now = self.now;
                self.install_seed(&path, now).map_err(|e| CommandError::SeedTrace {
                    reason: e.to_string(),
                })?;
                Ok(json!({ "prepared": true }))
            }
            Command::Shutdown => {
                self.shutdown_requested = true;
                Ok(json!({ "shutting_down": true }))
            }
        }
    }

    fn install_seed(&mut self, path: &Path, now: EpochMs) -> Result<(), EngineError> {
        let seed_err = |reason: String| EngineError::SeedTrace {
            path: path.to_owned(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| seed_err(e.to_string()))?;
        let schedule: ReplaySchedule = serde_json::from_str(&text).map_err(|e| seed_err(e.to_string()))?;
        schedule.validate().map_err(|e| seed_err(e.to_string()))?;
        self.store.install_prepared(&PreparedTrace::new(schedule, now))?;
        self.prepared_pending = true;
        tracing::info!(path = %path.display(), "seed trace installed");
        Ok(())
    }

    // Presence and lifecycle ---------------------------------------------

    fn poll_presence(&mut self) {
        let reading = match self.presence_override {
            Some(PresenceState::Occupied) => Some(0.0),
            Some(PresenceState::Vacant) => Some(f64::INFINITY),
            None => match self.backend.read_distance(self.now) {
                Ok(r) => r,
                Err(e) => {
                    self.fail("read_distance", &e.into());
                    return;
                }
            },
        };
        let Some(cm) = reading else { return };
        if let Some(state) = self.presence.update(cm, &self.cfg.presence) {
            self.emit(EventKind::PresenceChanged, json!({ "state": state }));
            if let Err(e) = self.on_presence(state) {
                self.fail("presence transition", &e);
            }
        }
    }

    fn on_presence(&mut self, state: PresenceState) -> Result<(), EngineError> {
        match state {
            PresenceState::Occupied => {
                if self.await_vacancy {
                    return Ok(());
                }
                match self.phase {
                    Phase::Idle => self.begin_occupancy()?,
                    Phase::Preparing if self.session.as_ref().is_some_and(|s| s.away_since.is_some()) => {
                        self.resume_occupancy()?
                    }
                    // Still computing the previous trace; picked up when it lands.
                    _ => {}
                }
            }
            PresenceState::Vacant => {
                self.await_vacancy = false;
                if self.phase == Phase::Occupied {
                    self.leave_occupancy()?;
                }
            }
        }
        Ok(())
    }

    fn begin_occupancy(&mut self) -> Result<(), EngineError> {
        let now = self.now;
        let id = self.store.begin_session(now)?;
        self.session = Some(LiveSession {
            id: id.clone(),
            started_at: now,
            bpm_samples: 0,
            stretch_samples: 0,
            last_bpm_t: None,
            last_stretch_t: None,
            next_sample: now,
            away_since: None,
        });
        self.backend.activate(now)?;
        let trace = self.store.take_prepared()?;
        self.prepared_pending = false;
        self.set_phase(Phase::Occupied, json!({
            "session": id,
            "replaying": trace.as_ref().map(|t| &t.source_session),
        }));
        if let Some(trace) = trace {
            self.start_replay(trace.schedule)?;
        }
        Ok(())
    }

    fn start_replay(&mut self, schedule: ReplaySchedule) -> Result<(), EngineError> {
        let pages = wire::schedule_pages(&schedule, self.cfg.page_size)?;
        let sent = self.backend.load_schedule(self.now, &pages)?;
        let beat_pages = replay::paginate(&schedule.beat_offsets_ms, self.cfg.page_size)?.len();
        let swing_pages = replay::paginate(&schedule.swing_offsets_ms, self.cfg.page_size)?.len();
        self.emit(EventKind::PagesSent, json!({
            "source_session": schedule.source_session,
            "frames": sent,
            "beat_pages": beat_pages,
            "swing_pages": swing_pages,
            "loop_period_ms": schedule.loop_period_ms,
        }));
        if !schedule.is_empty() {
            self.replay = Some(Replay {
                schedule,
                start: self.now,
                cursor: 0,
                fired_at_cursor: Vec::new(),
                beats_fired: 0,
                swings_fired: 0,
                next_cue: 0,
            });
        }
        Ok(())
    }

    fn leave_occupancy(&mut self) -> Result<(), EngineError> {
        let now = self.now;
        self.backend.deactivate(now)?;
        self.pending_cues.clear();
        let Some(s) = &mut self.session else {
            return Ok(());
        };
        s.away_since = Some(now);
        let id = s.id.clone();
        self.set_phase(Phase::Preparing, json!({ "session": id, "stage": "grace" }));
        Ok(())
    }

    fn resume_occupancy(&mut self) -> Result<(), EngineError> {
        let now = self.now;
        let period = self.cfg.stretch_period_ms;
        let Some(s) = &mut self.session else {
            return Ok(());
        };
        s.away_since = None;
        let ticks = (now - s.started_at).div_ceil(period);
        s.next_sample = s.started_at + ticks * period;
        let id = s.id.clone();
        self.backend.activate(now)?;
        if let Some(r) = &mut self.replay {
            r.cursor = now - r.start;
            r.fired_at_cursor.clear();
            let lead = self.cfg.woz.lead_ms;
            while r.cue(r.next_cue, lead).is_some_and(|c| c.due_at < now) {
                r.next_cue += 1;
            }
        }
        self.set_phase(Phase::Occupied, json!({ "session": id, "resumed": true }));
        Ok(())
    }

    fn check_lifecycle(&mut self) {
        let Some(s) = &self.session else { return };
        let now = self.now;
        let result = match s.away_since {
            Some(away) if now >= away + self.cfg.session_merge_gap_ms => self.finalize_and_prepare(away),
            None if self.phase == Phase::Occupied && now >= s.started_at + self.cfg.max_session_ms => {
                tracing::warn!(session = %s.id, "maximum session length reached");
                self.await_vacancy = true;
                self.backend
                    .deactivate(now)
                    .map_err(EngineError::from)
                    .and_then(|()| self.finalize_and_prepare(now))
            }
            _ => Ok(()),
        };
        if let Err(e) = result {
            self.fail("finalize", &e);
        }
    }

    fn finalize_and_prepare(&mut self, ended_at: EpochMs) -> Result<(), EngineError> {
        let Some(s) = self.session.take() else {
            return Ok(());
        };
        self.replay = None;
        self.pending_cues.clear();
        let record = self.store.finalize_session(&s.id, ended_at)?;
        self.set_phase(Phase::Preparing, json!({ "session": s.id, "stage": "compute" }));
        self.spawn_preparation(record);
        Ok(())
    }

    fn spawn_preparation(&mut self, record: SessionRecord) {
        self.preparing = Some(record.id.clone());
        let cfg = self.cfg.clone();
        let tx = self.tx.clone();
        std::thread::spawn(move || {
            let result = prepare(&cfg, &record);
            let _ = tx.send(Inbound::Prepared {
                session: record.id,
                result,
            });
        });
    }

    fn on_prepared(&mut self, session: SessionId, result: Result<ReplaySchedule, ReplayError>) {
        if self.preparing.as_ref() != Some(&session) {
            return;
        }
        self.preparing = None;
        match result {
            Ok(schedule) => {
                let detail = json!({
                    "session": session,
                    "beats": schedule.beat_offsets_ms.len(),
                    "swings": schedule.swing_offsets_ms.len(),
                    "loop_period_ms": schedule.loop_period_ms,
                });
                match self.store.install_prepared(&PreparedTrace::new(schedule, self.now)) {
                    Ok(()) => {
                        self.prepared_pending = true;
                        self.set_phase(Phase::Idle, detail);
                    }
                    Err(e) => self.fail("install_prepared", &e.into()),
                }
            }
            Err(e) => {
                self.emit(EventKind::Error, json!({
                    "context": "prepare_schedule", "session": session, "error": e.to_string(),
                }));
                self.set_phase(Phase::Idle, json!({ "session": session, "prepared": false }));
            }
        }
        if self.phase == Phase::Idle
            && self.presence.state() == PresenceState::Occupied
            && !self.await_vacancy
            && let Err(e) = self.begin_occupancy()
        {
            self.fail("begin occupancy", &e);
        }
    }

    // Recording and replay -----------------------------------------------

    fn sample_sensors(&mut self) {
        let now = self.now;
        let period = self.cfg.stretch_period_ms;
        let Some(s) = &self.session else { return };
        if s.away_since.is_some() || now < s.next_sample {
            return;
        }
        if let Err(e) = self.record_tick(now) {
            self.fail("record", &e);
            return;
        }
        if let Some(s) = &mut self.session {
            while s.next_sample <= now {
                s.next_sample += period;
            }
        }
    }

    fn record_tick(&mut self, now: EpochMs) -> Result<(), EngineError> {
        let pulse = self.backend.read_pulse(now)?;
        let stretch = self.backend.read_stretch(now)?;
        let Some(s) = &mut self.session else { return Ok(()) };
        let bpm: Vec<_> = pulse
            .into_iter()
            .filter(|p| p.is_plausible() && p.t >= s.started_at && s.last_bpm_t.is_none_or(|l| p.t > l))
            .collect();
        let stretch: Vec<_> = stretch
            .into_iter()
            .filter(|p| p.value.is_finite() && p.t >= s.started_at && s.last_stretch_t.is_none_or(|l| p.t > l))
            .collect();
        if !bpm.is_empty() {
            s.bpm_samples += self.store.append_bpm(&s.id, &bpm)?;
            s.last_bpm_t = bpm.last().map(|p| p.t);
        }
        if !stretch.is_empty() {
            s.stretch_samples += self.store.append_stretch(&s.id, &stretch)?;
            s.last_stretch_t = stretch.last().map(|p| p.t);
        }
        Ok(())
    }

    fn run_replay(&mut self) {
        let now = self.now;
        let woz = self.cfg.woz_mode;
        let pulse = self.cfg.vibration;
        loop {
            let Some(r) = &mut self.replay else { return };
            let Some(ev) = r.upcoming() else { break };
            let period = r.schedule.loop_period_ms;
            let due = r.start + ev.at(period);
            if due > now {
                break;
            }
            r.mark_fired(&ev);
            let detail = json!({ "offset_ms": ev.offset_ms, "loop_index": ev.loop_index, "due_at": due });
            let result = match ev.kind {
                PlaybackKind::Beat => {
                    r.beats_fired += 1;
                    self.backend
                        .actuate(now, Actuation::Vibrate(pulse))
                        .map(|_| Some(EventKind::BeatFired))
                }
                // The operator pulls the string; cues cover these.
                PlaybackKind::Swing if woz => Ok(None),
                PlaybackKind::Swing => {
                    r.swings_fired += 1;
                    self.backend.actuate(now, Actuation::Swing).map(|_| Some(EventKind::SwingFired))
                }
            };
            match result {
                Ok(Some(kind)) => self.emit(kind, detail),
                Ok(None) => {}
                Err(e) => {
                    self.fail("actuate", &e.into());
                    return;
                }
            }
        }
        if woz {
            self.issue_cues();
        }
    }

    fn issue_cues(&mut self) {
        let now = self.now;
        let lead = self.cfg.woz.lead_ms;
        let Some(r) = &mut self.replay else { return };
        while let Some(cue) = r.cue(r.next_cue, lead)
            && cue.issue_at <= now
        {
            r.next_cue += 1;
            if cue.due_at < now {
                continue;
            }
            let id = self.next_cue_id;
            self.next_cue_id += 1;
            self.bus.publish(now, EventKind::CueIssued, json!({
                "id": id,
                "kind": cue.kind,
                "issue_at": cue.issue_at,
                "due_at": cue.due_at,
                "in_ms": cue.due_at - now,
            }));
            self.pending_cues.push(TrackedCue { id, cue });
        }
    }

    fn expire_cues(&mut self) {
        let now = self.now;
        let tol = self.cfg.woz.late_tolerance_ms;
        let mut i = 0;
        while i < self.pending_cues.len() {
            if self.pending_cues[i].cue.expire(now, tol) {
                let c = self.pending_cues.remove(i);
                self.emit(EventKind::CueMissed, json!({
                    "id": c.id, "due_at": c.cue.due_at, "late_by_ms": c.cue.late_by_ms,
                }));
                self.remember_resolved(c);
            } else {
                i += 1;
            }
        }
    }

    fn remember_resolved(&mut self, c: TrackedCue) {
        if self.resolved_cues.len() == RESOLVED_CUES_KEPT {
            self.resolved_cues.pop_front();
        }
        self.resolved_cues.push_back(c);
    }

    fn ack_cue(&mut self, id: u64) -> CommandReply {
        let now = self.now;
        let tol = self.cfg.woz.late_tolerance_ms;
        let mut cue = if let Some(pos) = self.pending_cues.iter().position(|c| c.id == id) {
            self.pending_cues.remove(pos)
        } else if let Some(pos) = self
            .resolved_cues
            .iter()
            .position(|c| c.id == id && !c.cue.acknowledged)
        {
            self.resolved_cues.remove(pos).expect("position is in range")
        } else {
            return Err(CommandError::UnknownCue { id });
        };
        cue.cue.acknowledge(now, tol);
        let detail = json!({
            "id": cue.id,
            "due_at": cue.cue.due_at,
            "acked_at": now,
            "late_by_ms": cue.cue.late_by_ms,
        });
        self.emit(EventKind::CueAcked, detail.clone());
        self.remember_resolved(cue);
        Ok(detail)
    }

    // Failure and shutdown ------------------------------------------------

    /// Logs the failure and falls back to a safe phase: whatever was being
    /// recorded is closed and prepared, playback stops.
    fn fail(&mut self, context: &str, err: &EngineError) {
        tracing::error!(context, error = %err, "engine failure");
        self.emit(EventKind::Error, json!({ "context": context, "error": err.to_string() }));
        self.replay = None;
        self.pending_cues.clear();
        if self.presence.state() == PresenceState::Occupied {
            self.await_vacancy = true;
        }
        if let Some(s) = &self.session {
            let ended = s.away_since.unwrap_or_else(|| s.last_sample_t());
            if self.finalize_and_prepare(ended).is_ok() {
                return;
            }
            self.session = None;
        }
        if self.preparing.is_none() {
            self.set_phase(Phase::Idle, json!({ "failsafe": true }));
        }
    }

    /// Closes any live session at its last sample, prepares it, and closes
    /// the backend. Idempotent.
    pub fn shutdown(&mut self, now: EpochMs) {
        if self.stopped {
            return;
        }
        self.now = self.now.max(now);
        if let Some(s) = &self.session {
            let ended = s.away_since.unwrap_or_else(|| s.last_sample_t());
            if s.away_since.is_none()
                && let Err(e) = self.backend.deactivate(self.now)
            {
                tracing::warn!(error = %e, "deactivate during shutdown");
            }
            if let Err(e) = self.finalize_and_prepare(ended) {
                self.fail("shutdown finalize", &e);
            }
        }
        self.finish_preparation();
        self.replay = None;
        self.backend.close(self.now);
        self.set_phase(Phase::Idle, json!({ "shutdown": true }));
        self.stopped = true;
        self.publish_snapshot();
        self.running.store(false, Ordering::SeqCst);
        // Commands that raced the shutdown get a definite answer.
        while let Ok(msg) = self.rx.try_recv() {
            self.stash.push_back(msg);
        }
        for msg in self.stash.drain(..) {
            if let Inbound::Command { reply: Some(reply), .. } = msg {
                let _ = reply.send(Err(CommandError::EngineUnavailable));
            }
        }
    }

    fn publish_snapshot(&self) {
        let snap = self.build_snapshot();
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap;
    }

    fn build_snapshot(&self) -> Snapshot {
        let now = self.now;
        let session = self.session.as_ref().map(|s| SessionStatus {
            id: s.id.clone(),
            started_at: s.started_at,
            duration_ms: s.away_since.unwrap_or(now) - s.started_at,
            bpm_samples: s.bpm_samples,
            stretch_samples: s.stretch_samples,
            away_since: s.away_since,
        });
        let replay = self.replay.as_ref().map(|r| {
            let period = r.schedule.loop_period_ms;
            let elapsed = now.saturating_sub(r.start);
            let next_event = r.upcoming().map(|ev| NextEventStatus {
                kind: ev.kind,
                offset_ms: ev.offset_ms,
                loop_index: ev.loop_index,
                in_ms: (r.start + ev.at(period)).saturating_sub(now),
            });
            ReplayStatus {
                source_session: r.schedule.source_session.clone(),
                started_at: r.start,
                loop_period_ms: period,
                elapsed_ms: elapsed,
                loop_index: elapsed / period,
                beats_per_loop: r.schedule.beat_offsets_ms.len(),
                swings_per_loop: r.schedule.swing_offsets_ms.len(),
                beats_fired: r.beats_fired,
                swings_fired: r.swings_fired,
                next_event,
            }
        });
        Snapshot {
            as_of: now,
            phase: self.phase,
            presence: self.presence.state(),
            presence_override: self.presence_override,
            woz_mode: self.cfg.woz_mode,
            session,
            preparing: self.preparing.clone(),
            replay,
            prepared: self.prepared_pending,
            pending_cues: self
                .pending_cues
                .iter()
                .map(|c| CueStatus { id: c.id, cue: c.cue })
                .collect(),
        }
    }
}

fn prepare(cfg: &EngineConfig, record: &SessionRecord) -> Result<ReplaySchedule, ReplayError> {
    replay::prepare_schedule(record, &cfg.filter, &cfg.pelt)
}
