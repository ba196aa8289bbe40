use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};
use heartsway::api;
use heartsway::clock::{Clock, ScaledClock, SystemClock};
use heartsway::config::{ConfigError, EngineConfig};
use heartsway::csvio::{self, CsvError};
use heartsway::device::{Backend, DeviceError, Scenario, SerialBackend, SimBackend};
use heartsway::driver;
use heartsway::engine::{Command, Engine, EngineError};
use heartsway::events::EventBus;
use heartsway::store::{StoreError, TraceStore};
use heartsway_core::SessionId;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "heartsway", version, about = "Record, prepare and replay hammock biodata traces")]
struct Cli {
    /// Configuration file (TOML). HEARTSWAY_* variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Use the simulated backend instead of the serial controller.
    #[arg(long, global = true)]
    sim: bool,
    /// Wizard-of-Oz mode: swings become operator cues.
    #[arg(long, global = true)]
    woz: bool,
    /// Schedule (JSON) played to the first occupant when nothing is pending.
    #[arg(long, global = true, value_name = "PATH")]
    seed_trace: Option<PathBuf>,
    /// API listen address.
    #[arg(long, global = true, value_name = "ADDR")]
    bind: Option<SocketAddr>,
    /// Overrides `data_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the daemon: devices, orchestrator and HTTP API.
    Run {
        /// Occupant scenario for the simulated backend; the daemon exits
        /// when it is over.
        #[arg(long, value_name = "PATH")]
        scenario: Option<PathBuf>,
        /// Listen on all interfaces instead of loopback.
        #[arg(long)]
        lan: bool,
        /// Speed-up of simulated time when a scenario is given.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
    /// Play a scenario on a virtual clock and write its logs.
    Simulate {
        scenario: PathBuf,
        /// Directory for io_log.csv and events.jsonl.
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Filter a `t_ms,value` series and find its changepoints.
    Analyze {
        csv: PathBuf,
        /// Directory for changepoints.csv, filtered.csv and cue_sheet.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a retained session (or the prepared schedule) as CSV.
    Export {
        /// `live`, `predecessor`, `prepared`, or a session id.
        selector: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Inspect configuration.
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigCmd {
    /// Print every default value as TOML.
    PrintDefaults,
    /// Print the effective configuration after file and environment.
    Show,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Device(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Device(_) => 3,
            Self::Data(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Device(m) => write!(f, "device error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<DeviceError> for CliError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::InvalidScript(_) => Self::Config(e.to_string()),
            _ => Self::Device(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Device(d) => d.into(),
            other => Self::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Cmd::Run { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("HEARTSWAY_LOG").unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("heartsway: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Cmd::Config {
        action: ConfigCmd::PrintDefaults,
    } = cli.command
    {
        print!("{}", EngineConfig::defaults_toml());
        return Ok(());
    }
    let mut cfg = EngineConfig::load(cli.config.as_deref())?;
    if cli.sim {
        cfg.device = "sim".into();
    }
    if cli.woz {
        cfg.woz_mode = true;
    }
    if let Some(p) = cli.seed_trace {
        cfg.seed_trace = Some(p);
    }
    if let Some(b) = cli.bind {
        cfg.bind = b;
    }
    if let Some(d) = cli.data_dir {
        cfg.data_dir = Some(d);
    }
    cfg.validate()?;

    match cli.command {
        Cmd::Run {
            scenario,
            lan,
            time_scale,
        } => {
            if lan {
                cfg.bind.set_ip(IpAddr::V4(Ipv4Addr::UNSPECIFIED));
            }
            run(cfg, scenario.as_deref(), time_scale)
        }
        Cmd::Simulate { scenario, out } => simulate(cfg, &scenario, &out),
        Cmd::Analyze { csv, out } => analyze(&cfg, &csv, out),
        Cmd::Export { selector, out } => export(&cfg, &selector, &out),
        Cmd::Config { action: ConfigCmd::Show } => {
            let text = toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
        Cmd::Config {
            action: ConfigCmd::PrintDefaults,
        } => unreachable!("handled before loading the config"),
    }
}

fn run(cfg: EngineConfig, scenario: Option<&Path>, time_scale: f64) -> Result<(), CliError> {
    let data_dir = cfg.require_data_dir()?.to_owned();
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(CliError::Config("--time-scale must be > 0".into()));
    }
    let scenario = scenario.map(Scenario::load).transpose()?;
    if scenario.is_some() && !cfg.is_sim() {
        return Err(CliError::Config("--scenario needs the simulated backend (--sim)".into()));
    }
    let store = TraceStore::open(&data_dir)?;

    let (clock, until): (Box<dyn Clock>, Option<u64>) = match &scenario {
        Some(s) => (
            Box::new(ScaledClock::new(0, time_scale)),
            Some(s.end_ms() + driver::settle_ms(&cfg)),
        ),
        None => (Box::new(SystemClock::new()), None),
    };
    let backend: Box<dyn Backend> = if cfg.is_sim() {
        let s = scenario.unwrap_or_else(|| Scenario::new(0, Vec::new()));
        Box::new(SimBackend::new(s, cfg.swing_stroke_ms).without_distance_log())
    } else {
        Box::new(SerialBackend::open(&cfg.device, &cfg.serial, cfg.swing_stroke_ms)?)
    };

    let bus = Arc::new(EventBus::default());
    let bind = cfg.bind;
    let mut engine = Engine::new(cfg, store, backend, bus, clock.now_ms())?;
    let handle = engine.handle();

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt
        .block_on(api::bind(bind))
        .map_err(|e| CliError::Config(format!("cannot listen on {bind}: {e}")))?;
    tracing::info!(%bind, "api listening");

    let stop = Arc::new(AtomicBool::new(false));
    let engine_thread = {
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("engine".into())
            .spawn(move || driver::run_realtime(&mut engine, clock.as_ref(), until, &stop))?
    };

    let (done_tx, mut done_rx) = tokio::sync::oneshot::channel::<()>();
    let waiter = std::thread::spawn(move || {
        let _ = engine_thread.join();
        let _ = done_tx.send(());
    });

    let server_handle = handle.clone();
    rt.block_on(async move {
        let (stop_server, server_stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(api::serve(server_handle, listener, async {
            let _ = server_stopped.await;
        }));
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {
                tracing::info!("signal received, shutting down");
                stop.store(true, Ordering::SeqCst);
                let _ = handle.command(Command::Shutdown).await;
                let _ = (&mut done_rx).await;
            }
            _ = &mut done_rx => {}
        }
        let _ = stop_server.send(());
        let _ = server.await;
    });
    let _ = waiter.join();
    Ok(())
}

fn simulate(cfg: EngineConfig, scenario: &Path, out: &Path) -> Result<(), CliError> {
    let scenario = Scenario::load(scenario)?;
    let tmp;
    let data_dir = match &cfg.data_dir {
        Some(d) => d.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_owned()
        }
    };
    let outcome = driver::run_scenario(&cfg, scenario, &data_dir)?;
    fs::create_dir_all(out)?;
    let mut log = csv::Writer::from_path(out.join("io_log.csv")).map_err(|e| CliError::Data(e.to_string()))?;
    for r in &outcome.io_log {
        log.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    log.flush()?;
    let mut events = BufWriter::new(File::create(out.join("events.jsonl"))?);
    for e in &outcome.events {
        serde_json::to_writer(&mut events, e).map_err(|e| CliError::Data(e.to_string()))?;
        events.write_all(b"\n")?;
    }
    events.flush()?;

    let count = |k| outcome.events.iter().filter(|e| e.kind == k).count();
    use heartsway::events::EventKind as K;
    println!("simulated {} ms", outcome.end_ms);
    for e in outcome.events.iter().filter(|e| e.kind == K::PhaseChanged) {
        println!("{:>10} {} -> {}  {}", e.t, e.detail["from"], e.detail["to"], e.detail.get("session").unwrap_or(&serde_json::Value::Null));
    }
    println!(
        "beats {}  swings {}  cues {}  errors {}",
        count(K::BeatFired),
        count(K::SwingFired),
        count(K::CueIssued),
        count(K::Error)
    );
    println!("logs written to {}", out.display());
    Ok(())
}

fn analyze(cfg: &EngineConfig, path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let series = csvio::read_series(File::open(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let a = csvio::analyze(&series, &cfg.filter, &cfg.pelt)?;
    let out = out.unwrap_or_else(|| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
        PathBuf::from(format!("{stem}-analysis"))
    });
    fs::create_dir_all(&out)?;
    csvio::write_changepoints(File::create(out.join("changepoints.csv"))?, &a.changepoints)?;
    csvio::write_pairs(File::create(out.join("filtered.csv"))?, "value", a.kept.iter().map(|s| (s.t, s.value)))?;
    let origin = series.first().map_or(0, |s| s.t);
    let span = series.last().map_or(0, |s| s.t + cfg.stretch_period_ms - origin);
    let offsets: Vec<u64> = a.changepoints.iter().map(|t| t - origin).collect();
    fs::write(out.join("cue_sheet.txt"), csvio::cue_sheet(&offsets, span, cfg.woz.lead_ms))?;
    for t in &a.changepoints {
        println!("{t}");
    }
    Ok(())
}

fn export(cfg: &EngineConfig, selector: &str, out: &Path) -> Result<(), CliError> {
    let dir = cfg.require_data_dir()?;
    if !dir.is_dir() {
        return Err(CliError::Data(format!("data dir {} does not exist", dir.display())));
    }
    let store = TraceStore::open_read_only(dir)?;
    fs::create_dir_all(out)?;
    if selector == "prepared" {
        let trace = store
            .read_prepared()?
            .ok_or_else(|| CliError::Data("no prepared schedule".into()))?;
        let s = &trace.schedule;
        csvio::write_schedule(File::create(out.join("schedule.csv"))?, s)?;
        let json = serde_json::to_vec_pretty(s).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(out.join("schedule.json"), json)?;
        fs::write(out.join("cue_sheet.txt"), csvio::cue_sheet(&s.swing_offsets_ms, s.loop_period_ms, cfg.woz.lead_ms))?;
        println!("{}", out.join("schedule.csv").display());
        return Ok(());
    }
    let id = match selector {
        "live" => store.unfinished_session()?,
        "predecessor" => {
            let live = store.unfinished_session()?;
            store.session_ids()?.into_iter().rev().find(|id| Some(id) != live.as_ref())
        }
        id => Some(SessionId::from(id)),
    }
    .ok_or_else(|| CliError::Data(format!("no {selector} session retained")))?;
    let record = store.load_session(&id)?;
    let bpm_path = out.join(format!("{id}.bpm.csv"));
    let stretch_path = out.join(format!("{id}.stretch.csv"));
    csvio::write_session(&record, File::create(&bpm_path)?, File::create(&stretch_path)?)?;
    println!("{}\n{}", bpm_path.display(), stretch_path.display());
    Ok(())
}
