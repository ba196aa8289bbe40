//! Backend talking to the hammock controller over a serial link.
//!
//! The controller streams `DistanceReport`s continuously and, between
//! `Start` and `Stop`, `BpmReport`s and `StretchReport`s stamped relative to
//! `Start`. Every downstream frame is sent stop-and-wait.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use heartsway_core::signal::{BpmSample, StretchSample};
use heartsway_core::wire::{self, FrameDecoder, Link, Message, TransferConfig, TransferError};
use heartsway_core::EpochMs;

use super::{Actuation, Backend, Completion, DeviceError};
use crate::config::SerialConfig;

/// How long a single port read may block.
const READ_SLICE: Duration = Duration::from_millis(10);

#[derive(Debug, Default)]
struct Reports {
    distance: Option<f64>,
    bpm: VecDeque<(u32, f64)>,
    stretch: VecDeque<(u32, f64)>,
}

struct PortLink<'a, P> {
    port: &'a mut P,
    decoder: &'a mut FrameDecoder,
    reports: &'a mut Reports,
    origin: Instant,
}

impl<P: Read + Write> PortLink<'_, P> {
    /// Reads whatever is available within `budget` and files sensor
    /// reports. Returns the first Ack/Nack seen.
    fn pump(&mut self, budget: Duration) -> io::Result<Option<(Message, u8)>> {
        let deadline = Instant::now() + budget;
        let mut buf = [0u8; 256];
        loop {
            while let Some(frame) = self.decoder.next_frame() {
                match frame {
                    Ok((msg @ (Message::Ack { .. } | Message::Nack { .. }), seq)) => return Ok(Some((msg, seq))),
                    Ok((msg, _)) => file_report(self.reports, msg),
                    Err(e) => tracing::debug!(error = %e, "dropped controller frame"),
                }
            }
            // Keep reading while bytes flow; stop once the port is quiet
            // and the budget is spent.
            match self.port.read(&mut buf) {
                Ok(0) => return Ok(None),
                Ok(n) => {
                    self.decoder.push(&buf[..n]);
                    continue;
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
        }
    }
}

fn file_report(reports: &mut Reports, msg: Message) {
    match msg {
        Message::DistanceReport { cm } => reports.distance = Some(f64::from(cm)),
        Message::BpmReport { t_rel_ms, bpm_tenths } => reports.bpm.push_back((t_rel_ms, f64::from(bpm_tenths) / 10.0)),
        Message::StretchReport { t_rel_ms, value } => reports.stretch.push_back((t_rel_ms, f64::from(value))),
        other => tracing::debug!(?other, "unexpected upstream message"),
    }
}

impl<P: Read + Write> Link for PortLink<'_, P> {
    type Error = io::Error;

    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        self.port.write_all(frame)?;
        self.port.flush()
    }

    fn recv(&mut self, timeout_ms: u32) -> io::Result<Option<(Message, u8)>> {
        self.pump(Duration::from_millis(u64::from(timeout_ms)))
    }

    fn now_ms(&mut self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

pub struct SerialBackend<P> {
    port: P,
    decoder: FrameDecoder,
    reports: Reports,
    seq: u8,
    transfer: TransferConfig,
    origin: Instant,
    /// Host time of the last `Start`, the zero of report timestamps.
    started_at: Option<EpochMs>,
    last_bpm_t: Option<EpochMs>,
    last_stretch_t: Option<EpochMs>,
    swing_stroke_ms: u64,
    closed: bool,
}

impl SerialBackend<Box<dyn serialport::SerialPort>> {
    pub fn open(path: &str, cfg: &SerialConfig, swing_stroke_ms: u64) -> Result<Self, DeviceError> {
        let failed = |reason: String| DeviceError::OpenFailed {
            device: path.to_owned(),
            reason,
        };
        let data_bits = match cfg.data_bits {
            5 => serialport::DataBits::Five,
            6 => serialport::DataBits::Six,
            7 => serialport::DataBits::Seven,
            8 => serialport::DataBits::Eight,
            n => return Err(failed(format!("unsupported data bits {n}"))),
        };
        let parity = match cfg.parity.as_str() {
            "odd" => serialport::Parity::Odd,
            "even" => serialport::Parity::Even,
            _ => serialport::Parity::None,
        };
        let stop_bits = match cfg.stop_bits {
            1 => serialport::StopBits::One,
            2 => serialport::StopBits::Two,
            n => return Err(failed(format!("unsupported stop bits {n}"))),
        };
        let port = serialport::new(path, cfg.baud)
            .data_bits(data_bits)
            .parity(parity)
            .stop_bits(stop_bits)
            .timeout(READ_SLICE)
            .open()
            .map_err(|e| failed(e.to_string()))?;
        Ok(Self::new(port, swing_stroke_ms))
    }
}

impl<P: Read + Write + Send> SerialBackend<P> {
    pub fn new(port: P, swing_stroke_ms: u64) -> Self {
        Self {
            port,
            decoder: FrameDecoder::new(),
            reports: Reports::default(),
            seq: 0,
            transfer: TransferConfig::default(),
            origin: Instant::now(),
            started_at: None,
            last_bpm_t: None,
            last_stretch_t: None,
            swing_stroke_ms,
            closed: false,
        }
    }

    pub fn with_transfer_config(mut self, transfer: TransferConfig) -> Self {
        self.transfer = transfer;
        self
    }

    pub fn into_port(self) -> P {
        self.port
    }

    fn link(&mut self) -> PortLink<'_, P> {
        PortLink {
            port: &mut self.port,
            decoder: &mut self.decoder,
            reports: &mut self.reports,
            origin: self.origin,
        }
    }

    fn check_open(&self) -> Result<(), DeviceError> {
        if self.closed {
            Err(DeviceError::BackendClosed)
        } else {
            Ok(())
        }
    }

    fn drain(&mut self) -> Result<(), DeviceError> {
        if let Some((msg, seq)) = self.link().pump(Duration::ZERO).map_err(link_err)? {
            tracing::debug!(?msg, seq, "stray reply from controller");
        }
        Ok(())
    }

    fn send_reliably(&mut self, msgs: &[Message]) -> Result<usize, DeviceError> {
        self.check_open()?;
        let first = self.seq;
        let config = self.transfer;
        let report = wire::transfer_schedule(msgs, &mut self.link(), first, &config).map_err(|e| match e {
            TransferError::Link(io) => link_err(io),
            other => DeviceError::Link(other.to_string()),
        })?;
        self.seq = report.next_seq;
        if report.retransmissions > 0 {
            tracing::warn!(retransmissions = report.retransmissions, "controller link retransmitted");
        }
        Ok(report.pages)
    }

    fn take_samples(
        queue: &mut VecDeque<(u32, f64)>,
        started_at: Option<EpochMs>,
        last: &mut Option<EpochMs>,
    ) -> Vec<(EpochMs, f64)> {
        let Some(origin) = started_at else {
            queue.clear();
            return Vec::new();
        };
        let mut out = Vec::new();
        for (rel, v) in queue.drain(..) {
            let t = origin + u64::from(rel);
            if last.is_none_or(|l| t > l) {
                *last = Some(t);
                out.push((t, v));
            }
        }
        out
    }
}

fn link_err(e: io::Error) -> DeviceError {
    DeviceError::Link(e.to_string())
}

impl<P: Read + Write + Send> Backend for SerialBackend<P> {
    fn read_distance(&mut self, _now: EpochMs) -> Result<Option<f64>, DeviceError> {
        self.check_open()?;
        self.drain()?;
        Ok(self.reports.distance.take())
    }

    fn activate(&mut self, now: EpochMs) -> Result<(), DeviceError> {
        self.send_reliably(&[Message::Start])?;
        self.reports.bpm.clear();
        self.reports.stretch.clear();
        self.started_at = Some(now);
        Ok(())
    }

    fn deactivate(&mut self, _now: EpochMs) -> Result<(), DeviceError> {
        self.send_reliably(&[Message::Stop])?;
        self.started_at = None;
        Ok(())
    }

    fn read_pulse(&mut self, _now: EpochMs) -> Result<Vec<BpmSample>, DeviceError> {
        self.check_open()?;
        self.drain()?;
        Ok(Self::take_samples(&mut self.reports.bpm, self.started_at, &mut self.last_bpm_t)
            .into_iter()
            .map(|(t, bpm)| BpmSample::new(t, bpm))
            .collect())
    }

    fn read_stretch(&mut self, _now: EpochMs) -> Result<Vec<StretchSample>, DeviceError> {
        self.check_open()?;
        self.drain()?;
        Ok(Self::take_samples(&mut self.reports.stretch, self.started_at, &mut self.last_stretch_t)
            .into_iter()
            .map(|(t, v)| StretchSample::new(t, v))
            .collect())
    }

    fn actuate(&mut self, now: EpochMs, what: Actuation) -> Result<Completion, DeviceError> {
        let (msg, took) = match what {
            Actuation::Vibrate(p) => (Message::vibrate(&p), u64::from(p.duration_ms)),
            Actuation::Swing => (Message::Swing, self.swing_stroke_ms),
        };
        self.send_reliably(&[msg])?;
        Ok(Completion {
            started_at: now,
            done_at: now + took,
        })
    }

    fn load_schedule(&mut self, _now: EpochMs, pages: &[Message]) -> Result<usize, DeviceError> {
        self.send_reliably(pages)
    }

    fn close(&mut self, _now: EpochMs) {
        if !self.closed {
            if self.started_at.is_some() {
                let _ = self.send_reliably(&[Message::Stop]);
            }
            self.closed = true;
        }
    }
}
