//! Loops that feed time into an [`Engine`].

use std::path::Path;
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, Ordering};

use heartsway_core::EpochMs;

use crate::clock::{Clock, VirtualClock};
use crate::config::EngineConfig;
use crate::device::{IoRecord, Scenario, SimBackend};
use crate::engine::{Engine, EngineError, Snapshot};
use crate::events::{ApiEvent, EventBus};
use crate::store::TraceStore;

/// Steps the engine deadline by deadline on a virtual clock until `until`.
/// Preparation work is awaited in place, so it takes zero simulated time.
/// `on_step` runs after every step.
pub fn run_virtual(engine: &mut Engine, clock: &VirtualClock, until: EpochMs, mut on_step: impl FnMut(&mut Engine)) {
    loop {
        if engine.is_preparing() {
            engine.finish_preparation();
            on_step(engine);
        }
        if engine.shutdown_requested() {
            break;
        }
        let t = engine.next_deadline();
        if t > until {
            break;
        }
        clock.set(t);
        engine.step(t);
        on_step(engine);
    }
}

/// Steps the engine against a real (or scaled) clock until a Shutdown
/// command, `stop`, or the clock passing `until`; then shuts it down.
pub fn run_realtime(engine: &mut Engine, clock: &dyn Clock, until: Option<EpochMs>, stop: &AtomicBool) {
    loop {
        let now = clock.now_ms();
        engine.step(now);
        let finished = until.is_some_and(|u| now >= u) && !engine.is_preparing();
        if engine.shutdown_requested() || stop.load(Ordering::SeqCst) || finished {
            break;
        }
        let mut target = engine.next_deadline();
        if let Some(u) = until {
            target = target.min(u);
        }
        let wait = clock.wait_until(target);
        if !wait.is_zero() {
            engine.wait_inbound(wait);
        }
    }
    engine.shutdown(clock.now_ms());
}

/// Time after the last departure by which everything has settled: the
/// vacancy debounce, the merge gap, and one more poll.
pub fn settle_ms(cfg: &EngineConfig) -> u64 {
    let p = &cfg.presence;
    u64::from(p.debounce_count + 1) * p.poll_period_ms + cfg.session_merge_gap_ms + cfg.stretch_period_ms
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub events: Vec<ApiEvent>,
    pub io_log: Vec<IoRecord>,
    pub end_ms: EpochMs,
    pub snapshot: Snapshot,
}

/// Plays a whole scenario on a virtual clock starting at 0 and shuts the
/// engine down afterwards. Every event is captured, not only the ring's.
pub fn run_scenario(
    cfg: &EngineConfig,
    scenario: Scenario,
    data_dir: &Path,
) -> Result<ScenarioOutcome, EngineError> {
    let store = TraceStore::open(data_dir)?;
    let backend = SimBackend::new(scenario.clone(), cfg.swing_stroke_ms);
    let log = backend.log();
    let bus = Arc::new(EventBus::default());
    let clock = VirtualClock::new(0);
    let mut engine = Engine::new(cfg.clone(), store, Box::new(backend), bus.clone(), 0)?;
    let end = scenario.end_ms() + settle_ms(cfg);
    let mut events = Vec::new();
    let mut collect = |_: &mut Engine| {
        let from = events.last().map_or(1, |e: &ApiEvent| e.seq + 1);
        events.extend(bus.since(from));
    };
    run_virtual(&mut engine, &clock, end, &mut collect);
    engine.shutdown(end);
    collect(&mut engine);
    Ok(ScenarioOutcome {
        events,
        io_log: log.records(),
        end_ms: end,
        snapshot: engine.snapshot(),
    })
}
