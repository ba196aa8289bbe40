//! Host ↔ controller serial protocol.
//!
//! ```text
//! +------+----------+-----+-------------+-----------+----------+
//! | 0xAA | msg_type | seq | payload_len | payload   | checksum |
//! |  1   |    1     |  1  |      1      | 0..=128   |    1     |
//! +------+----------+-----+-------------+-----------+----------+
//! ```
//!
//! The checksum is the XOR of every byte from `msg_type` through the end of
//! the payload. Multi-byte integers are little-endian. Ack and Nack carry the
//! acknowledged sequence number in the header `seq` field.
//!
//! Schedule pages go out stop-and-wait: each page must be acked before the
//! next is sent, so the controller never buffers more than one page per kind.

use alloc::vec::Vec;

use thiserror::Error;

use crate::replay::{self, ReplaySchedule, VibrationPulse};

pub const SYNC: u8 = 0xAA;
/// Largest payload a frame may carry.
pub const MAX_PAYLOAD: usize = 128;
/// Most offsets in one `SchedulePage`.
pub const MAX_PAGE_POINTS: usize = 30;
pub const HEADER_LEN: usize = 4;
pub const ACK_TIMEOUT_MS: u32 = 500;
/// Transmissions per page, the first one included.
pub const MAX_ATTEMPTS: u32 = 3;

pub mod msg_type {
    pub const BPM_REPORT: u8 = 0x01;
    pub const STRETCH_REPORT: u8 = 0x02;
    pub const DISTANCE_REPORT: u8 = 0x03;
    pub const SCHEDULE_PAGE: u8 = 0x10;
    pub const VIBRATE: u8 = 0x20;
    pub const SWING: u8 = 0x21;
    pub const START: u8 = 0x30;
    pub const STOP: u8 = 0x31;
    pub const ACK: u8 = 0x40;
    pub const NACK: u8 = 0x41;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PageKind {
    Beat = 0,
    Swing = 1,
}

impl TryFrom<u8> for PageKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(Self::Beat),
            1 => Ok(Self::Swing),
            other => Err(WireError::BadField { msg_type: msg_type::SCHEDULE_PAGE, value: other }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// Upstream heart rate in tenths of BPM.
    BpmReport { t_rel_ms: u32, bpm_tenths: u16 },
    StretchReport { t_rel_ms: u32, value: u16 },
    DistanceReport { cm: u16 },
    /// A page with `total_pages == 0` and no offsets announces that the kind
    /// has nothing to play.
    SchedulePage {
        kind: PageKind,
        page_index: u16,
        total_pages: u16,
        offsets: Vec<u32>,
    },
    Vibrate { strength_255: u8, duration_ms: u16 },
    Swing,
    Start,
    Stop,
    Ack { seq: u8 },
    Nack { seq: u8, reason: u8 },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Self::BpmReport { .. } => BPM_REPORT,
            Self::StretchReport { .. } => STRETCH_REPORT,
            Self::DistanceReport { .. } => DISTANCE_REPORT,
            Self::SchedulePage { .. } => SCHEDULE_PAGE,
            Self::Vibrate { .. } => VIBRATE,
            Self::Swing => SWING,
            Self::Start => START,
            Self::Stop => STOP,
            Self::Ack { .. } => ACK,
            Self::Nack { .. } => NACK,
        }
    }

    pub fn vibrate(pulse: &VibrationPulse) -> Self {
        Self::Vibrate {
            strength_255: pulse.strength_255(),
            duration_ms: pulse.duration_ms.min(u32::from(u16::MAX)) as u16,
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        match self {
            Self::BpmReport { t_rel_ms, bpm_tenths } => {
                out.extend_from_slice(&t_rel_ms.to_le_bytes());
                out.extend_from_slice(&bpm_tenths.to_le_bytes());
            }
            Self::StretchReport { t_rel_ms, value } => {
                out.extend_from_slice(&t_rel_ms.to_le_bytes());
                out.extend_from_slice(&value.to_le_bytes());
            }
            Self::DistanceReport { cm } => out.extend_from_slice(&cm.to_le_bytes()),
            Self::SchedulePage {
                kind,
                page_index,
                total_pages,
                offsets,
            } => {
                if offsets.len() > MAX_PAGE_POINTS {
                    return Err(WireError::PayloadTooLarge {
                        len: 5 + 4 * offsets.len(),
                    });
                }
                out.push(*kind as u8);
                out.extend_from_slice(&page_index.to_le_bytes());
                out.extend_from_slice(&total_pages.to_le_bytes());
                for o in offsets {
                    out.extend_from_slice(&o.to_le_bytes());
                }
            }
            Self::Vibrate {
                strength_255,
                duration_ms,
            } => {
                out.push(*strength_255);
                out.extend_from_slice(&duration_ms.to_le_bytes());
            }
            Self::Nack { reason, .. } => out.push(*reason),
            Self::Swing | Self::Start | Self::Stop | Self::Ack { .. } => {}
        }
        Ok(())
    }

    fn parse(msg_type: u8, seq: u8, p: &[u8]) -> Result<Self, WireError> {
        use msg_type::*;
        let bad_len = || WireError::BadLength {
            msg_type,
            len: p.len(),
        };
        let fixed = |n: usize| if p.len() == n { Ok(()) } else { Err(bad_len()) };
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        Ok(match msg_type {
            BPM_REPORT => {
                fixed(6)?;
                Self::BpmReport {
                    t_rel_ms: u32_at(0),
                    bpm_tenths: u16_at(4),
                }
            }
            STRETCH_REPORT => {
                fixed(6)?;
                Self::StretchReport {
                    t_rel_ms: u32_at(0),
                    value: u16_at(4),
                }
            }
            DISTANCE_REPORT => {
                fixed(2)?;
                Self::DistanceReport { cm: u16_at(0) }
            }
            SCHEDULE_PAGE => {
                if p.len() < 5 || !(p.len() - 5).is_multiple_of(4) || (p.len() - 5) / 4 > MAX_PAGE_POINTS {
                    return Err(bad_len());
                }
                Self::SchedulePage {
                    kind: PageKind::try_from(p[0])?,
                    page_index: u16_at(1),
                    total_pages: u16_at(3),
                    offsets: p[5..].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
                }
            }
            VIBRATE => {
                fixed(3)?;
                Self::Vibrate {
                    strength_255: p[0],
                    duration_ms: u16_at(1),
                }
            }
            SWING => {
                fixed(0)?;
                Self::Swing
            }
            START => {
                fixed(0)?;
                Self::Start
            }
            STOP => {
                fixed(0)?;
                Self::Stop
            }
            ACK => {
                fixed(0)?;
                Self::Ack { seq }
            }
            NACK => {
                fixed(1)?;
                Self::Nack { seq, reason: p[0] }
            }
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload of {len} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge { len: usize },
    #[error("ack/nack for seq {acked} must be sent with header seq {acked}, got {given}")]
    SeqMismatch { acked: u8, given: u8 },
    #[error("offset {0} ms does not fit the wire format")]
    OffsetOutOfRange(u64),
    #[error("frame does not start with the sync byte")]
    BadSync,
    #[error("checksum mismatch: computed {computed:#04x}, frame says {found:#04x}")]
    BadChecksum { computed: u8, found: u8 },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload length {len} invalid for message type {msg_type:#04x}")]
    BadLength { msg_type: u8, len: usize },
    #[error("invalid field value {value} for message type {msg_type:#04x}")]
    BadField { msg_type: u8, value: u8 },
    #[error("{0} bytes after the end of the frame")]
    TrailingBytes(usize),
}

/// XOR fold.
pub fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

/// Encodes one frame.
pub fn encode(msg: &Message, seq: u8) -> Result<Vec<u8>, WireError> {
    if let Message::Ack { seq: acked } | Message::Nack { seq: acked, .. } = msg
        && *acked != seq
    {
        return Err(WireError::SeqMismatch {
            acked: *acked,
            given: seq,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 16);
    out.extend_from_slice(&[SYNC, msg.msg_type(), seq, 0]);
    msg.write_payload(&mut out)?;
    let len = out.len() - HEADER_LEN;
    if len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge { len });
    }
    out[3] = len as u8;
    out.push(checksum(&out[1..]));
    Ok(out)
}

/// Decodes a frame at the start of `bytes`; returns the message, its seq
/// and the frame length.
fn decode_prefix(bytes: &[u8]) -> Result<(Message, u8, usize), WireError> {
    if bytes.first() != Some(&SYNC) {
        return Err(WireError::BadSync);
    }
    if bytes.len() < HEADER_LEN + 1 {
        return Err(WireError::Truncated {
            needed: HEADER_LEN + 1,
            have: bytes.len(),
        });
    }
    let len = usize::from(bytes[3]);
    if len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge { len });
    }
    let total = HEADER_LEN + len + 1;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            have: bytes.len(),
        });
    }
    let computed = checksum(&bytes[1..total - 1]);
    let found = bytes[total - 1];
    if computed != found {
        return Err(WireError::BadChecksum { computed, found });
    }
    let msg = Message::parse(bytes[1], bytes[2], &bytes[HEADER_LEN..total - 1])?;
    Ok((msg, bytes[2], total))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<(Message, u8), WireError> {
    let (msg, seq, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - used));
    }
    Ok((msg, seq))
}

/// Incremental decoder for a byte stream. After a bad frame it drops the
/// sync byte and rescans for the next one.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame or error; `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<(Message, u8), WireError>> {
        let start = self.buf.iter().position(|&b| b == SYNC).unwrap_or(self.buf.len());
        self.buf.drain(..start);
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        match decode_prefix(&self.buf) {
            Ok((msg, seq, used)) => {
                self.buf.drain(..used);
                Some(Ok((msg, seq)))
            }
            Err(WireError::Truncated { .. }) => None,
            Err(e) => {
                self.buf.drain(..1);
                Some(Err(e))
            }
        }
    }

    /// Called when the line has gone idle: a partial frame still buffered
    /// can never complete and is reported as truncated.
    pub fn flush(&mut self) -> Option<WireError> {
        let Some(start) = self.buf.iter().position(|&b| b == SYNC) else {
            self.buf.clear();
            return None;
        };
        let have = self.buf.len() - start;
        let needed = match self.buf.get(start + 3) {
            Some(&len) => HEADER_LEN + usize::from(len) + 1,
            None => HEADER_LEN + 1,
        };
        self.buf.clear();
        Some(WireError::Truncated { needed, have })
    }
}

/// `SchedulePage` messages for a schedule: beat pages, then swing pages. A
/// kind with no offsets gets one empty notice page.
pub fn schedule_pages(schedule: &ReplaySchedule, page_size: usize) -> Result<Vec<Message>, WireError> {
    if page_size == 0 || page_size > MAX_PAGE_POINTS {
        return Err(WireError::PayloadTooLarge {
            len: 5 + 4 * page_size,
        });
    }
    let mut out = Vec::new();
    for (kind, offsets) in [
        (PageKind::Beat, &schedule.beat_offsets_ms),
        (PageKind::Swing, &schedule.swing_offsets_ms),
    ] {
        let pages = replay::paginate(offsets, page_size).expect("page size checked above");
        if pages.is_empty() {
            out.push(Message::SchedulePage {
                kind,
                page_index: 0,
                total_pages: 0,
                offsets: Vec::new(),
            });
            continue;
        }
        let total = u16::try_from(pages.len()).map_err(|_| WireError::PayloadTooLarge { len: pages.len() })?;
        for page in pages {
            let offsets = page
                .offsets
                .iter()
                .map(|&o| u32::try_from(o).map_err(|_| WireError::OffsetOutOfRange(o)))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(Message::SchedulePage {
                kind,
                page_index: page.index as u16,
                total_pages: total,
                offsets,
            });
        }
    }
    Ok(out)
}

/// Byte transport to the controller.
pub trait Link {
    type Error;

    fn send(&mut self, frame: &[u8]) -> Result<(), Self::Error>;

    /// Waits at most `timeout_ms` for the next decoded frame. Undecodable
    /// input is the link's business; it should surface only good frames.
    fn recv(&mut self, timeout_ms: u32) -> Result<Option<(Message, u8)>, Self::Error>;

    /// Monotonic milliseconds.
    fn now_ms(&mut self) -> u64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransferConfig {
    pub ack_timeout_ms: u32,
    pub max_attempts: u32,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            ack_timeout_ms: ACK_TIMEOUT_MS,
            max_attempts: MAX_ATTEMPTS,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub pages: usize,
    pub transmissions: usize,
    pub retransmissions: usize,
    /// Sequence number to use for the next frame.
    pub next_seq: u8,
}

#[derive(Debug, PartialEq, Eq, Error)]
pub enum TransferError<E> {
    #[error("no ack for page {page} after {attempts} attempts")]
    Timeout { page: usize, attempts: u32 },
    #[error("page {page} nacked (reason {reason})")]
    NackReceived { page: usize, reason: u8 },
    #[error(transparent)]
    Wire(WireError),
    #[error("link error")]
    Link(E),
}

/// Sends `pages` stop-and-wait, numbering frames from `first_seq`.
///
/// A page is retransmitted after a Nack or when no matching Ack arrives
/// within the ack timeout. Frames not addressed to the outstanding seq are
/// ignored.
pub fn transfer_schedule<L: Link>(
    pages: &[Message],
    link: &mut L,
    first_seq: u8,
    config: &TransferConfig,
) -> Result<TransferReport, TransferError<L::Error>> {
    let mut report = TransferReport {
        next_seq: first_seq,
        ..TransferReport::default()
    };
    for (page, msg) in pages.iter().enumerate() {
        let seq = report.next_seq;
        let frame = encode(msg, seq).map_err(TransferError::Wire)?;
        let mut last_nack = None;
        let mut acked = false;
        for attempt in 0..config.max_attempts {
            if attempt > 0 {
                report.retransmissions += 1;
            }
            report.transmissions += 1;
            link.send(&frame).map_err(TransferError::Link)?;
            match await_reply(link, seq, config.ack_timeout_ms)? {
                Some(Reply::Ack) => {
                    acked = true;
                    break;
                }
                Some(Reply::Nack(reason)) => last_nack = Some(reason),
                None => last_nack = None,
            }
        }
        if !acked {
            return Err(match last_nack {
                Some(reason) => TransferError::NackReceived { page, reason },
                None => TransferError::Timeout {
                    page,
                    attempts: config.max_attempts,
                },
            });
        }
        report.pages += 1;
        report.next_seq = seq.wrapping_add(1);
    }
    Ok(report)
}

enum Reply {
    Ack,
    Nack(u8),
}

fn await_reply<L: Link>(link: &mut L, seq: u8, timeout_ms: u32) -> Result<Option<Reply>, TransferError<L::Error>> {
    let deadline = link.now_ms() + u64::from(timeout_ms);
    loop {
        let now = link.now_ms();
        if now >= deadline {
            return Ok(None);
        }
        let remaining = (deadline - now).min(u64::from(u32::MAX)) as u32;
        match link.recv(remaining).map_err(TransferError::Link)? {
            None => return Ok(None),
            Some((Message::Ack { seq: s }, _)) if s == seq => return Ok(Some(Reply::Ack)),
            Some((Message::Nack { seq: s, reason }, _)) if s == seq => return Ok(Some(Reply::Nack(reason))),
            Some(_) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn vibrate_layout() {
        let frame = encode(&Message::vibrate(&VibrationPulse::default()), 1).unwrap();
        assert_eq!(frame[..6], [SYNC, 0x20, 0x01, 0x03, 0x66, 0x64]);
        assert_eq!(frame[6], 0x00);
        assert_eq!(frame.len(), 8);
        // independent fold over msg_type..payload end
        let mut x = 0u8;
        for b in [0x20u8, 0x01, 0x03, 0x66, 0x64, 0x00] {
            x ^= b;
        }
        assert_eq!(x, 0x20);
        assert_eq!(frame[7], x);
        assert_eq!(checksum(&[0x20, 0x01, 0x03, 0x66, 0x64, 0x00]), 0x20);
    }

    #[test]
    fn ack_is_five_bytes() {
        let frame = encode(&Message::Ack { seq: 7 }, 7).unwrap();
        assert_eq!(frame, vec![SYNC, 0x40, 7, 0, 0x40 ^ 7]);
        assert_eq!(decode(&frame), Ok((Message::Ack { seq: 7 }, 7)));
        assert_eq!(
            encode(&Message::Ack { seq: 7 }, 8),
            Err(WireError::SeqMismatch { acked: 7, given: 8 })
        );
    }

    #[test]
    fn oversized_page_is_rejected() {
        let msg = Message::SchedulePage {
            kind: PageKind::Beat,
            page_index: 0,
            total_pages: 1,
            offsets: vec![1; 31],
        };
        assert!(matches!(encode(&msg, 0), Err(WireError::PayloadTooLarge { .. })));
        let full = Message::SchedulePage {
            kind: PageKind::Beat,
            page_index: 0,
            total_pages: 1,
            offsets: vec![u32::MAX; 30],
        };
        let frame = encode(&full, 0).unwrap();
        assert_eq!(frame[3], 125);
        assert_eq!(decode(&frame).unwrap().0, full);
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut frame = encode(&Message::Vibrate { strength_255: 102, duration_ms: 100 }, 3).unwrap();
        frame[5] ^= 0x10;
        assert!(matches!(decode(&frame), Err(WireError::BadChecksum { .. })));
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[]), Err(WireError::BadSync));
        assert_eq!(decode(&[0x55, 0x30, 0, 0, 0x30]), Err(WireError::BadSync));
        assert!(matches!(decode(&[SYNC, 0x30, 0]), Err(WireError::Truncated { .. })));
        let unknown = [SYNC, 0x7f, 0, 0, 0x7f];
        assert_eq!(decode(&unknown), Err(WireError::UnknownType(0x7f)));
        let mut frame = encode(&Message::Start, 0).unwrap();
        frame.push(0);
        assert_eq!(decode(&frame), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn stream_decoder_resyncs_after_truncation() {
        let a = encode(&Message::DistanceReport { cm: 33 }, 1).unwrap();
        let b = encode(&Message::Swing, 2).unwrap();
        let mut d = FrameDecoder::new();
        d.push(&[0x00, 0x13]);
        d.push(&a[..a.len() - 2]);
        assert_eq!(d.next_frame(), None);
        assert!(matches!(d.flush(), Some(WireError::Truncated { .. })));
        d.push(&b);
        assert_eq!(d.next_frame(), Some(Ok((Message::Swing, 2))));
        assert_eq!(d.next_frame(), None);
    }

    #[test]
    fn stream_decoder_skips_corrupt_frame() {
        let mut a = encode(&Message::StretchReport { t_rel_ms: 5, value: 9 }, 1).unwrap();
        a[6] ^= 0xff;
        let b = encode(&Message::Stop, 2).unwrap();
        let mut d = FrameDecoder::new();
        d.push(&a);
        d.push(&b);
        let mut good = vec![];
        let mut errors = 0;
        while let Some(r) = d.next_frame() {
            match r {
                Ok(m) => good.push(m),
                Err(_) => errors += 1,
            }
        }
        assert!(errors >= 1);
        assert_eq!(good.last(), Some(&(Message::Stop, 2)));
    }

    #[test]
    fn empty_schedule_sends_notices() {
        let s = ReplaySchedule {
            source_session: "x".into(),
            beat_offsets_ms: vec![],
            swing_offsets_ms: vec![],
            loop_period_ms: 10,
        };
        let pages = schedule_pages(&s, 30).unwrap();
        assert_eq!(pages.len(), 2);
        assert!(pages.iter().all(|p| matches!(p, Message::SchedulePage { total_pages: 0, offsets, .. } if offsets.is_empty())));
    }

    #[test]
    fn schedule_pages_split_by_kind() {
        let s = ReplaySchedule {
            source_session: "x".into(),
            beat_offsets_ms: (1..=75).map(|k| k * 1000).collect(),
            swing_offsets_ms: vec![60_000],
            loop_period_ms: 100_000,
        };
        let pages = schedule_pages(&s, 30).unwrap();
        assert_eq!(pages.len(), 4);
        match &pages[2] {
            Message::SchedulePage { kind, page_index, total_pages, offsets } => {
                assert_eq!((*kind, *page_index, *total_pages, offsets.len()), (PageKind::Beat, 2, 3, 15));
            }
            other => panic!("{other:?}"),
        }
        assert!(schedule_pages(&s, 31).is_err());
        let big = ReplaySchedule {
            beat_offsets_ms: vec![u64::from(u32::MAX) + 1],
            loop_period_ms: u64::MAX,
            ..s
        };
        assert_eq!(
            schedule_pages(&big, 30),
            Err(WireError::OffsetOutOfRange(u64::from(u32::MAX) + 1))
        );
    }
}
