//! Engine configuration: one TOML file, overridable through `HEARTSWAY_*`
//! environment variables (`__` separates nested keys, e.g.
//! `HEARTSWAY_FILTER__WINDOW=50`).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use figment::Figment;
use figment::providers::{Env, Format, Serialized, Toml};
use heartsway_core::cue::{DEFAULT_LATE_TOLERANCE_MS, DEFAULT_LEAD_MS};
use heartsway_core::presence::PresenceParams;
use heartsway_core::replay::{DEFAULT_PAGE_SIZE, VibrationPulse};
use heartsway_core::signal::{FilterParams, PeltParams, STRETCH_PERIOD_MS};
use heartsway_core::wire::MAX_PAGE_POINTS;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "HEARTSWAY_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("config: {0}")]
    Parse(String),
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WozConfig {
    pub lead_ms: u64,
    pub late_tolerance_ms: u64,
}

impl Default for WozConfig {
    fn default() -> Self {
        Self {
            lead_ms: DEFAULT_LEAD_MS,
            late_tolerance_ms: DEFAULT_LATE_TOLERANCE_MS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerialConfig {
    pub baud: u32,
    pub data_bits: u8,
    pub parity: String,
    pub stop_bits: u8,
}

impl Default for SerialConfig {
    fn default() -> Self {
        Self {
            baud: 115_200,
            data_bits: 8,
            parity: "none".into(),
            stop_bits: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// `"sim"` or a serial device path.
    pub device: String,
    pub woz_mode: bool,
    pub bind: SocketAddr,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_trace: Option<PathBuf>,
    pub page_size: usize,
    pub stretch_period_ms: u64,
    /// A return within this gap continues the same session.
    pub session_merge_gap_ms: u64,
    pub max_session_ms: u64,
    pub swing_stroke_ms: u64,
    pub filter: FilterParams,
    pub pelt: PeltParams,
    pub vibration: VibrationPulse,
    pub presence: PresenceParams,
    pub woz: WozConfig,
    pub serial: SerialConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            device: "sim".into(),
            woz_mode: false,
            bind: SocketAddr::from(([127, 0, 0, 1], 7878)),
            seed_trace: None,
            page_size: DEFAULT_PAGE_SIZE,
            stretch_period_ms: STRETCH_PERIOD_MS,
            session_merge_gap_ms: 10_000,
            max_session_ms: 60 * 60 * 1000,
            swing_stroke_ms: 1500,
            filter: FilterParams::default(),
            pelt: PeltParams::default(),
            vibration: VibrationPulse::default(),
            presence: PresenceParams::default(),
            woz: WozConfig::default(),
            serial: SerialConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Defaults, then the file (if any), then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut fig = Figment::from(Serialized::defaults(EngineConfig::default()));
        if let Some(path) = path {
            if !path.exists() {
                return Err(ConfigError::Parse(format!("{} does not exist", path.display())));
            }
            fig = fig.merge(Toml::file_exact(path));
        }
        fig = fig.merge(Env::prefixed(ENV_PREFIX).split("__"));
        let cfg: EngineConfig = fig.extract().map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = Figment::from(Serialized::defaults(EngineConfig::default()))
            .merge(Toml::string(s))
            .extract()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.filter;
        if f.min_window < 2 {
            return Err(ConfigError::invalid("filter.min_window", "must be >= 2"));
        }
        if f.window < f.min_window {
            return Err(ConfigError::invalid("filter.window", "must be >= filter.min_window"));
        }
        if !(f.k_sigma.is_finite() && f.k_sigma > 0.0) {
            return Err(ConfigError::invalid("filter.k_sigma", "must be > 0"));
        }
        if !(self.pelt.penalty.is_finite() && self.pelt.penalty >= 0.0) {
            return Err(ConfigError::invalid("pelt.penalty", "must be >= 0"));
        }
        if let Some(g) = self.pelt.gamma
            && !(g.is_finite() && g > 0.0)
        {
            return Err(ConfigError::invalid("pelt.gamma", "must be > 0"));
        }
        if self.page_size == 0 || self.page_size > MAX_PAGE_POINTS {
            return Err(ConfigError::invalid(
                "page_size",
                format!("must be in 1..={MAX_PAGE_POINTS}"),
            ));
        }
        if self.stretch_period_ms == 0 {
            return Err(ConfigError::invalid("stretch_period_ms", "must be > 0"));
        }
        if self.max_session_ms == 0 {
            return Err(ConfigError::invalid("max_session_ms", "must be > 0"));
        }
        self.vibration
            .validate()
            .map_err(|e| ConfigError::invalid("vibration", e.to_string()))?;
        self.presence
            .validate()
            .map_err(|e| ConfigError::invalid("presence", e))?;
        if self.device.trim().is_empty() {
            return Err(ConfigError::invalid("device", "must be \"sim\" or a serial device path"));
        }
        if !matches!(self.serial.parity.as_str(), "none" | "odd" | "even") {
            return Err(ConfigError::invalid("serial.parity", "must be none, odd or even"));
        }
        Ok(())
    }

    /// The data directory, required by anything that touches the store.
    pub fn require_data_dir(&self) -> Result<&Path, ConfigError> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| ConfigError::invalid("data_dir", "is required"))
    }

    pub fn is_sim(&self) -> bool {
        self.device == "sim"
    }

    /// Defaults as TOML.
    pub fn defaults_toml() -> String {
        let body = toml::to_string(&EngineConfig::default()).expect("defaults serialize");
        format!("# data_dir = \"/var/lib/heartsway\"  (required)\n{body}")
    }
}
