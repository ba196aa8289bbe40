use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Epoch milliseconds that never go backwards.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;

    /// Real time to wait until the clock reads `target`.
    fn wait_until(&self, target: u64) -> Duration {
        Duration::from_millis(target.saturating_sub(self.now_ms()))
    }
}

/// Wall clock anchored once at construction and advanced by a monotonic
/// instant, so NTP steps cannot reorder samples.
#[derive(Clone, Debug)]
pub struct SystemClock {
    origin: Instant,
    origin_epoch_ms: u64,
}

impl SystemClock {
    pub fn new() -> Self {
        let origin_epoch_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            origin: Instant::now(),
            origin_epoch_ms,
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin_epoch_ms + self.origin.elapsed().as_millis() as u64
    }
}

/// Clock running `scale` times faster than real time from a start value,
/// for watching simulated scenarios at demo speed.
#[derive(Clone, Debug)]
pub struct ScaledClock {
    origin: Instant,
    start_ms: u64,
    scale: f64,
}

impl ScaledClock {
    pub fn new(start_ms: u64, scale: f64) -> Self {
        assert!(scale.is_finite() && scale > 0.0, "scale must be > 0");
        Self {
            origin: Instant::now(),
            start_ms,
            scale,
        }
    }
}

impl Clock for ScaledClock {
    fn now_ms(&self) -> u64 {
        self.start_ms + (self.origin.elapsed().as_secs_f64() * 1000.0 * self.scale) as u64
    }

    fn wait_until(&self, target: u64) -> Duration {
        let sim_ms = target.saturating_sub(self.now_ms()) as f64;
        Duration::from_secs_f64(sim_ms / self.scale / 1000.0)
    }
}

/// Manually advanced clock for simulation and tests.
#[derive(Clone, Debug, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    /// Moves the clock to `t`; earlier values are ignored.
    pub fn set(&self, t: u64) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, by_ms: u64) {
        self.0.fetch_add(by_ms, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_never_rewinds() {
        let c = VirtualClock::new(100);
        c.set(50);
        assert_eq!(c.now_ms(), 100);
        c.advance(25);
        c.set(400);
        assert_eq!(c.now_ms(), 400);
    }

    #[test]
    fn scaled_clock_runs_fast() {
        let c = ScaledClock::new(1_000, 1000.0);
        std::thread::sleep(Duration::from_millis(5));
        assert!(c.now_ms() >= 6_000);
        assert!(c.wait_until(c.now_ms() + 10_000) <= Duration::from_millis(10));
    }

    #[test]
    fn system_clock_is_monotonic() {
        let c = SystemClock::new();
        let a = c.now_ms();
        let b = c.now_ms();
        assert!(b >= a);
    }
}
