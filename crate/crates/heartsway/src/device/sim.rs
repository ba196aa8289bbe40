//! Simulated hammock: scripted occupants, deterministic sensor streams and
//! an I/O log of everything the engine asked the hardware to do.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use heartsway_core::signal::{BpmSample, StretchSample, MAX_PLAUSIBLE_BPM, MIN_PLAUSIBLE_BPM, STRETCH_PERIOD_MS};
use heartsway_core::wire::Message;
use heartsway_core::EpochMs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Actuation, Backend, Completion, DeviceError};

pub const OCCUPIED_CM: f64 = 20.0;
pub const VACANT_CM: f64 = 150.0;
pub const DISTANCE_POLL_MS: u64 = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpmProfile {
    pub baseline: f64,
    pub drift_per_min: f64,
    pub noise_sigma: f64,
}

impl Default for BpmProfile {
    fn default() -> Self {
        Self {
            baseline: 60.0,
            drift_per_min: 0.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StretchProfile {
    pub baseline: f64,
    /// Level shift applied at every odd-numbered movement and removed at
    /// every even-numbered one, so the fabric tension toggles.
    pub step: f64,
    pub noise_sigma: f64,
}

impl Default for StretchProfile {
    fn default() -> Self {
        Self {
            baseline: 100.0,
            step: 300.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupantScript {
    pub duration_ms: u64,
    #[serde(default)]
    pub movement_times_ms: Vec<u64>,
    #[serde(default)]
    pub bpm: BpmProfile,
    #[serde(default)]
    pub stretch: StretchProfile,
    /// `[start_ms, length_ms]` intervals, relative to arrival, during which
    /// the occupant is out of the hammock.
    #[serde(default)]
    pub presence_gaps_ms: Vec<[u64; 2]>,
}

impl OccupantScript {
    pub fn steady(duration_ms: u64, bpm: f64, movement_times_ms: Vec<u64>) -> Self {
        Self {
            duration_ms,
            movement_times_ms,
            bpm: BpmProfile {
                baseline: bpm,
                ..BpmProfile::default()
            },
            stretch: StretchProfile::default(),
            presence_gaps_ms: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: String| Err(DeviceError::InvalidScript(m));
        if self.duration_ms == 0 {
            return bad("duration_ms must be > 0".into());
        }
        if let Some(&t) = self.movement_times_ms.iter().find(|&&t| t >= self.duration_ms) {
            return bad(format!("movement at {t} ms is outside the {} ms occupancy", self.duration_ms));
        }
        if self.movement_times_ms.windows(2).any(|w| w[0] >= w[1]) {
            return bad("movement_times_ms must be strictly increasing".into());
        }
        let b = &self.bpm;
        if !(b.baseline > MIN_PLAUSIBLE_BPM && b.baseline < MAX_PLAUSIBLE_BPM) {
            return bad(format!("bpm.baseline {} is not a plausible heart rate", b.baseline));
        }
        for (name, v) in [
            ("bpm.drift_per_min", b.drift_per_min),
            ("stretch.baseline", self.stretch.baseline),
            ("stretch.step", self.stretch.step),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("bpm.noise_sigma", b.noise_sigma),
            ("stretch.noise_sigma", self.stretch.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        let mut gaps = self.presence_gaps_ms.clone();
        gaps.sort_unstable();
        let mut prev_end = 0;
        for [start, len] in gaps {
            if len == 0 || start == 0 || start + len >= self.duration_ms || start < prev_end {
                return bad(format!("presence gap [{start}, {len}] must lie inside the occupancy and not overlap"));
            }
            prev_end = start + len;
        }
        Ok(())
    }

    /// Whether the occupant is in the hammock `rel_ms` after arrival.
    pub fn present_at(&self, rel_ms: u64) -> bool {
        rel_ms < self.duration_ms
            && !self
                .presence_gaps_ms
                .iter()
                .any(|&[start, len]| rel_ms >= start && rel_ms < start + len)
    }

    pub fn bpm_at(&self, rel_ms: u64, seed: u64) -> f64 {
        let b = &self.bpm;
        let drift = b.drift_per_min * rel_ms as f64 / 60_000.0;
        let v = b.baseline + drift + b.noise_sigma * gaussian(seed, CHANNEL_BPM, rel_ms);
        v.clamp(MIN_PLAUSIBLE_BPM + 1.0, MAX_PLAUSIBLE_BPM - 1.0)
    }

    /// Heartbeats as the pulse sensor reports them: one reading per beat,
    /// carrying the rate that produced the interval ending at that beat.
    /// Times are relative to arrival; beats while away are skipped.
    pub fn beats(&self, seed: u64) -> impl Iterator<Item = BpmSample> + '_ {
        let mut walk = BeatWalk::default();
        std::iter::from_fn(move || walk.next(self, seed)).filter(|b| self.present_at(b.t))
    }

    pub fn stretch_at(&self, rel_ms: u64, seed: u64) -> f64 {
        let s = &self.stretch;
        let moved = self.movement_times_ms.iter().filter(|&&t| t <= rel_ms).count();
        let level = if moved % 2 == 1 { s.baseline + s.step } else { s.baseline };
        (level + s.noise_sigma * gaussian(seed, CHANNEL_STRETCH, rel_ms)).max(0.0)
    }
}

const CHANNEL_BPM: u64 = 1;
const CHANNEL_STRETCH: u64 = 2;

/// Standard normal draw keyed by (seed, channel, time), so a stream does not
/// depend on how often or in which order it is read.
fn gaussian(seed: u64, channel: u64, rel_ms: u64) -> f64 {
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(channel.rotate_left(48))
        ^ rel_ms.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    ChaCha8Rng::seed_from_u64(key).sample(StandardNormal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistanceReading {
    pub t: EpochMs,
    pub cm: f64,
}

/// Sensor streams of one occupant, timestamps relative to arrival.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupantStreams {
    pub bpm: Vec<BpmSample>,
    pub stretch: Vec<StretchSample>,
    pub distance: Vec<DistanceReading>,
}

/// Samples a script offline: pulse and stretch at 1 Hz while present,
/// distance every poll for the whole occupancy.
/// Position of the beat sequence, in exact (fractional) milliseconds so
/// rounding never accumulates.
#[derive(Clone, Copy, Debug, Default)]
struct BeatWalk {
    at: f64,
}

impl BeatWalk {
    fn peek(&self, script: &OccupantScript, seed: u64) -> (f64, f64) {
        let bpm = script.bpm_at(self.at.round() as u64, seed);
        (self.at + 60_000.0 / bpm, bpm)
    }

    fn next(&mut self, script: &OccupantScript, seed: u64) -> Option<BpmSample> {
        let (at, bpm) = self.peek(script, seed);
        let t = at.round() as u64;
        if t >= script.duration_ms {
            return None;
        }
        self.at = at;
        Some(BpmSample::new(t, bpm))
    }
}

pub fn simulate_occupant(script: &OccupantScript, seed: u64) -> Result<OccupantStreams, DeviceError> {
    script.validate()?;
    let sample_times = (0..script.duration_ms)
        .step_by(STRETCH_PERIOD_MS as usize)
        .filter(|&t| script.present_at(t));
    let bpm = script.beats(seed).collect();
    let stretch = sample_times
        .map(|t| StretchSample::new(t, script.stretch_at(t, seed)))
        .collect();
    let distance = (0..script.duration_ms)
        .step_by(DISTANCE_POLL_MS as usize)
        .map(|t| DistanceReading {
            t,
            cm: if script.present_at(t) { OCCUPIED_CM } else { VACANT_CM },
        })
        .collect();
    Ok(OccupantStreams { bpm, stretch, distance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledOccupant {
    /// Absolute simulated time of arrival.
    pub arrive_at_ms: u64,
    #[serde(flatten)]
    pub script: OccupantScript,
}

impl ScheduledOccupant {
    pub fn leave_at_ms(&self) -> u64 {
        self.arrive_at_ms + self.script.duration_ms
    }
}

/// A sequence of occupants for one simulated hammock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_occupied_cm")]
    pub occupied_cm: f64,
    #[serde(default = "default_vacant_cm")]
    pub vacant_cm: f64,
    pub occupants: Vec<ScheduledOccupant>,
}

fn default_occupied_cm() -> f64 {
    OCCUPIED_CM
}

fn default_vacant_cm() -> f64 {
    VACANT_CM
}

impl Scenario {
    pub fn new(seed: u64, occupants: Vec<ScheduledOccupant>) -> Self {
        Self {
            seed,
            occupied_cm: OCCUPIED_CM,
            vacant_cm: VACANT_CM,
            occupants,
        }
    }

    /// Occupants back to back, each arriving `gap_ms` after the previous
    /// one left; the first arrives at `first_arrival_ms`.
    pub fn chain(seed: u64, first_arrival_ms: u64, gap_ms: u64, scripts: Vec<OccupantScript>) -> Self {
        let mut at = first_arrival_ms;
        let occupants = scripts
            .into_iter()
            .map(|script| {
                let o = ScheduledOccupant {
                    arrive_at_ms: at,
                    script,
                };
                at = o.leave_at_ms() + gap_ms;
                o
            })
            .collect();
        Self::new(seed, occupants)
    }

    pub fn from_toml(text: &str) -> Result<Self, DeviceError> {
        let s: Scenario = toml::from_str(text).map_err(|e| DeviceError::InvalidScript(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeviceError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let mut prev_leave = None;
        for (i, o) in self.occupants.iter().enumerate() {
            o.script
                .validate()
                .map_err(|e| DeviceError::InvalidScript(format!("occupant {i}: {e}")))?;
            if prev_leave.is_some_and(|l| o.arrive_at_ms < l) {
                return Err(DeviceError::InvalidScript(format!(
                    "occupant {i} arrives before the previous one leaves"
                )));
            }
            prev_leave = Some(o.leave_at_ms());
        }
        if !(self.occupied_cm >= 0.0 && self.vacant_cm > self.occupied_cm) {
            return Err(DeviceError::InvalidScript("vacant_cm must exceed occupied_cm".into()));
        }
        Ok(())
    }

    /// Time the last occupant leaves.
    pub fn end_ms(&self) -> u64 {
        self.occupants.last().map_or(0, |o| o.leave_at_ms())
    }

    /// The occupant in the hammock at `t`, with their index and seed.
    fn occupant_at(&self, t: u64) -> Option<(usize, &ScheduledOccupant)> {
        self.occupants
            .iter()
            .enumerate()
            .find(|(_, o)| t >= o.arrive_at_ms && o.script.present_at(t - o.arrive_at_ms))
    }

    fn occupant_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// One line of the simulated backend's I/O log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoRecord {
    pub t_ms: u64,
    pub channel: String,
    pub detail: String,
}

/// Shared, append-only record of backend calls.
#[derive(Clone, Debug, Default)]
pub struct IoLog(Arc<Mutex<Vec<IoRecord>>>);

impl IoLog {
    fn lock(&self) -> MutexGuard<'_, Vec<IoRecord>> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, t_ms: u64, channel: &str, detail: impl Into<String>) {
        self.lock().push(IoRecord {
            t_ms,
            channel: channel.into(),
            detail: detail.into(),
        });
    }

    pub fn records(&self) -> Vec<IoRecord> {
        self.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `t_ms,channel,detail` CSV.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.lock().iter() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub mod channel {
    pub const DISTANCE: &str = "distance";
    pub const ACTIVATE: &str = "activate";
    pub const DEACTIVATE: &str = "deactivate";
    pub const PULSE: &str = "pulse";
    pub const STRETCH: &str = "stretch";
    pub const VIBRATE: &str = "vibrate";
    pub const SWING: &str = "swing";
    pub const PAGES: &str = "pages";
    pub const CLOSE: &str = "close";

    /// Channels that must stay silent while nobody is in the hammock.
    pub const GATED: [&str; 4] = [PULSE, STRETCH, VIBRATE, SWING];
}

/// Backend driven by a [`Scenario`]. Sensor values are a pure function of
/// the scenario and the time of the read.
#[derive(Debug)]
pub struct SimBackend {
    scenario: Scenario,
    log: IoLog,
    swing_stroke_ms: u64,
    log_distance: bool,
    closed: bool,
    /// Occupant index and where its beat sequence has been read up to.
    pulse: Option<(usize, BeatWalk)>,
}

impl SimBackend {
    pub fn new(scenario: Scenario, swing_stroke_ms: u64) -> Self {
        Self {
            scenario,
            log: IoLog::default(),
            swing_stroke_ms,
            log_distance: true,
            closed: false,
            pulse: None,
        }
    }

    /// Leaves distance polls out of the log (they dominate its size).
    pub fn without_distance_log(mut self) -> Self {
        self.log_distance = false;
        self
    }

    pub fn log(&self) -> IoLog {
        self.log.clone()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn check_open(&self) -> Result<(), DeviceError> {
        if self.closed {
            Err(DeviceError::BackendClosed)
        } else {
            Ok(())
        }
    }
}

impl Backend for SimBackend {
    fn read_distance(&mut self, now: EpochMs) -> Result<Option<f64>, DeviceError> {
        self.check_open()?;
        let cm = if self.scenario.occupant_at(now).is_some() {
            self.scenario.occupied_cm
        } else {
            self.scenario.vacant_cm
        };
        if self.log_distance {
            self.log.push(now, channel::DISTANCE, format!("{cm}"));
        }
        Ok(Some(cm))
    }

    fn activate(&mut self, now: EpochMs) -> Result<(), DeviceError> {
        self.check_open()?;
        self.log.push(now, channel::ACTIVATE, "");
        Ok(())
    }

    fn deactivate(&mut self, now: EpochMs) -> Result<(), DeviceError> {
        self.check_open()?;
        self.log.push(now, channel::DEACTIVATE, "");
        Ok(())
    }

    fn read_pulse(&mut self, now: EpochMs) -> Result<Vec<BpmSample>, DeviceError> {
        self.check_open()?;
        let mut beats = Vec::new();
        if let Some((i, o)) = self.scenario.occupant_at(now) {
            let seed = self.scenario.occupant_seed(i);
            let rel_now = now - o.arrive_at_ms;
            let mut walk = match self.pulse {
                Some((j, w)) if j == i && w.at.round() as u64 <= rel_now => w,
                _ => BeatWalk::default(),
            };
            while walk.peek(&o.script, seed).0.round() as u64 <= rel_now {
                let Some(b) = walk.next(&o.script, seed) else { break };
                if o.script.present_at(b.t) {
                    beats.push(BpmSample::new(o.arrive_at_ms + b.t, b.bpm));
                }
            }
            self.pulse = Some((i, walk));
        }
        let detail = beats.iter().map(|b| format!("{:.1}", b.bpm)).collect::<Vec<_>>().join(" ");
        self.log.push(now, channel::PULSE, detail);
        Ok(beats)
    }

    fn read_stretch(&mut self, now: EpochMs) -> Result<Vec<StretchSample>, DeviceError> {
        self.check_open()?;
        let sample = self.scenario.occupant_at(now).map(|(i, o)| {
            let v = o.script.stretch_at(now - o.arrive_at_ms, self.scenario.occupant_seed(i));
            StretchSample::new(now, v)
        });
        let detail = sample.map_or_else(String::new, |s| format!("{}", s.value));
        self.log.push(now, channel::STRETCH, detail);
        Ok(sample.into_iter().collect())
    }

    fn actuate(&mut self, now: EpochMs, what: Actuation) -> Result<Completion, DeviceError> {
        self.check_open()?;
        let done_at = match what {
            Actuation::Vibrate(p) => {
                self.log.push(
                    now,
                    channel::VIBRATE,
                    format!("strength={:.2} duration_ms={}", p.strength, p.duration_ms),
                );
                now + u64::from(p.duration_ms)
            }
            Actuation::Swing => {
                self.log.push(now, channel::SWING, "");
                now + self.swing_stroke_ms
            }
        };
        Ok(Completion {
            started_at: now,
            done_at,
        })
    }

    fn load_schedule(&mut self, now: EpochMs, pages: &[Message]) -> Result<usize, DeviceError> {
        self.check_open()?;
        let mut detail = String::new();
        for m in pages {
            if let Message::SchedulePage {
                kind,
                page_index,
                total_pages,
                offsets,
            } = m
            {
                let _ = write!(detail, "{kind:?}:{page_index}/{total_pages}:{} ", offsets.len());
            }
        }
        self.log.push(now, channel::PAGES, detail.trim_end().to_owned());
        Ok(pages.len())
    }

    fn close(&mut self, now: EpochMs) {
        if !self.closed {
            self.log.push(now, channel::CLOSE, "");
            self.closed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use heartsway_core::replay::VibrationPulse;
    use heartsway_core::signal::{self, FilterParams, PeltParams};

    #[test]
    fn steady_script_gives_one_second_ibis() {
        let s = simulate_occupant(&OccupantScript::steady(30_000, 60.0, vec![]), 9).unwrap();
        // beats at 1 s .. 29 s; the one at 30 s falls on departure
        assert_eq!(s.bpm.len(), 29);
        assert_eq!(s.bpm[0].t, 1000);
        for ibi in signal::bpm_to_ibi(&s.bpm).unwrap() {
            assert_eq!(ibi.ibi_ms, 1000.0);
        }
    }

    #[test]
    fn one_reading_per_beat() {
        let script = OccupantScript::steady(10_000, 75.0, vec![]);
        let times: Vec<u64> = script.beats(0).map(|b| b.t).collect();
        assert_eq!(times, (1..=12).map(|k| k * 800).collect::<Vec<_>>());

        let scenario = Scenario::new(0, vec![ScheduledOccupant { arrive_at_ms: 500, script }]);
        let mut sim = SimBackend::new(scenario, 1500);
        let first = sim.read_pulse(2_000).unwrap();
        assert_eq!(first.iter().map(|b| b.t).collect::<Vec<_>>(), vec![1_300]);
        let rest = sim.read_pulse(4_000).unwrap();
        assert_eq!(rest.iter().map(|b| b.t).collect::<Vec<_>>(), vec![2_100, 2_900, 3_700]);
        assert!(sim.read_pulse(4_000).unwrap().is_empty());
    }

    #[test]
    fn movement_at_sixty_seconds_is_detected() {
        let s = simulate_occupant(&OccupantScript::steady(120_000, 60.0, vec![60_000]), 1).unwrap();
        let moments =
            signal::movement_moments(&s.stretch, &FilterParams::default(), &PeltParams::default()).unwrap();
        assert_eq!(moments.iter().map(|m| m.t).collect::<Vec<_>>(), vec![60_000]);
    }

    #[test]
    fn same_seed_same_streams() {
        let mut script = OccupantScript::steady(90_000, 70.0, vec![20_000, 50_000]);
        script.bpm.noise_sigma = 2.0;
        script.stretch.noise_sigma = 5.0;
        let a = simulate_occupant(&script, 42).unwrap();
        let b = simulate_occupant(&script, 42).unwrap();
        let c = simulate_occupant(&script, 43).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_ne!(a.bpm, c.bpm);
    }

    #[test]
    fn gaps_leave_holes_and_vacant_distance() {
        let mut script = OccupantScript::steady(20_000, 60.0, vec![]);
        script.presence_gaps_ms = vec![[5_000, 3_000]];
        let s = simulate_occupant(&script, 0).unwrap();
        // 19 beats, minus those at 5, 6 and 7 s
        assert_eq!(s.bpm.len(), 16);
        let at = |t| s.distance.iter().find(|d| d.t == t).unwrap().cm;
        assert_eq!(at(4_800), OCCUPIED_CM);
        assert_eq!(at(5_000), VACANT_CM);
        assert_eq!(at(8_000), OCCUPIED_CM);
    }

    #[test]
    fn invalid_scripts() {
        let mut s = OccupantScript::steady(10_000, 60.0, vec![10_000]);
        assert!(matches!(s.validate(), Err(DeviceError::InvalidScript(_))));
        s.movement_times_ms = vec![5_000, 4_000];
        assert!(s.validate().is_err());
        s.movement_times_ms.clear();
        s.bpm.baseline = 0.0;
        assert!(s.validate().is_err());
        s.bpm.baseline = 60.0;
        s.presence_gaps_ms = vec![[9_000, 5_000]];
        assert!(s.validate().is_err());
        assert!(simulate_occupant(&s, 0).is_err());
    }

    #[test]
    fn actuation_log_entries() {
        let mut b = SimBackend::new(Scenario::new(0, vec![]), 1500);
        let c = b.actuate(10, Actuation::Vibrate(VibrationPulse::default())).unwrap();
        assert_eq!(c.done_at, 110);
        b.actuate(20, Actuation::Swing).unwrap();
        let log = b.log().records();
        assert_eq!(log[0].channel, "vibrate");
        assert_eq!(log[0].detail, "strength=0.40 duration_ms=100");
        assert_eq!((log[1].t_ms, log[1].channel.as_str()), (20, "swing"));
        b.close(30);
        assert!(matches!(b.actuate(40, Actuation::Swing), Err(DeviceError::BackendClosed)));
        assert!(matches!(b.read_distance(40), Err(DeviceError::BackendClosed)));
    }

    #[test]
    fn scenario_toml() {
        let s = Scenario::from_toml(
            r#"
            seed = 3
            [[occupants]]
            arrive_at_ms = 1000
            duration_ms = 600000
            movement_times_ms = [60000, 200000]
            [occupants.bpm]
            baseline = 60.0

            [[occupants]]
            arrive_at_ms = 700000
            duration_ms = 300000
            "#,
        )
        .unwrap();
        assert_eq!(s.occupants.len(), 2);
        assert_eq!(s.occupants[0].script.stretch, StretchProfile::default());
        assert_eq!(s.end_ms(), 1_000_000);
        assert!(Scenario::from_toml("[[occupants]]\narrive_at_ms = 0\nduration_ms = 0\n").is_err());
    }

    #[test]
    fn reads_follow_the_scenario() {
        let scen = Scenario::chain(5, 1000, 30_000, vec![OccupantScript::steady(10_000, 75.0, vec![])]);
        let mut b = SimBackend::new(scen, 1500);
        assert_eq!(b.read_distance(800).unwrap(), Some(VACANT_CM));
        assert_eq!(b.read_distance(1000).unwrap(), Some(OCCUPIED_CM));
        assert_eq!(b.read_pulse(2000).unwrap(), vec![BpmSample::new(1800, 75.0)]);
        assert_eq!(b.read_pulse(11_000).unwrap(), vec![]);
        let mut csv = Vec::new();
        b.log().write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t_ms,channel,detail\n800,distance,150\n"), "{text}");
    }
}
