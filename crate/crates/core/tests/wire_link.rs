//! Stop-and-wait transfer against a simulated controller on a virtual clock,
//! plus codec fuzzing.

use heartsway_core::replay::ReplaySchedule;
use heartsway_core::wire::{
    self, FrameDecoder, Link, Message, PageKind, TransferConfig, TransferError, WireError, decode, encode,
};
use proptest::prelude::*;
use std::collections::{HashMap, VecDeque};

/// Controller model: keeps only the latest page of each kind and answers
/// according to a script (`true` = ack, `false` = nack) per transmission.
struct ScriptedController {
    now: u64,
    replies: VecDeque<Option<bool>>,
    pending: VecDeque<(Message, u8)>,
    received: Vec<(Message, u8)>,
    held: HashMap<PageKind, Message>,
    max_held_per_kind: usize,
}

impl ScriptedController {
    fn new(replies: impl IntoIterator<Item = Option<bool>>) -> Self {
        Self {
            now: 0,
            replies: replies.into_iter().collect(),
            pending: VecDeque::new(),
            received: vec![],
            held: HashMap::new(),
            max_held_per_kind: 0,
        }
    }
}

impl Link for ScriptedController {
    type Error = ();

    fn send(&mut self, frame: &[u8]) -> Result<(), ()> {
        let (msg, seq) = decode(frame).expect("host sends valid frames");
        self.received.push((msg.clone(), seq));
        // every transmission gets a reply unless the script says silence
        match self.replies.pop_front().unwrap_or(Some(true)) {
            Some(true) => {
                if let Message::SchedulePage { kind, .. } = &msg {
                    self.held.insert(*kind, msg.clone());
                    let per_kind = self.held.values().filter(|m| matches!(m, Message::SchedulePage { kind: k, .. } if k == kind)).count();
                    self.max_held_per_kind = self.max_held_per_kind.max(per_kind);
                }
                self.pending.push_back((Message::Ack { seq }, seq));
            }
            Some(false) => self.pending.push_back((Message::Nack { seq, reason: 1 }, seq)),
            None => {}
        }
        Ok(())
    }

    fn recv(&mut self, timeout_ms: u32) -> Result<Option<(Message, u8)>, ()> {
        match self.pending.pop_front() {
            Some(reply) => {
                self.now += 5;
                Ok(Some(reply))
            }
            None => {
                self.now += u64::from(timeout_ms);
                Ok(None)
            }
        }
    }

    fn now_ms(&mut self) -> u64 {
        self.now
    }
}

fn three_pages() -> Vec<Message> {
    let s = ReplaySchedule {
        source_session: "a".into(),
        beat_offsets_ms: (1..=65).map(|k| k * 1000).collect(),
        swing_offsets_ms: vec![],
        loop_period_ms: 70_000,
    };
    let mut pages = wire::schedule_pages(&s, 30).unwrap();
    pages.retain(|m| matches!(m, Message::SchedulePage { kind: PageKind::Beat, .. }));
    assert_eq!(pages.len(), 3);
    pages
}

#[test]
fn three_acked_pages_in_order() {
    let pages = three_pages();
    let mut link = ScriptedController::new([]);
    let report = wire::transfer_schedule(&pages, &mut link, 10, &TransferConfig::default()).unwrap();
    assert_eq!(report.pages, 3);
    assert_eq!(report.transmissions, 3);
    assert_eq!(report.retransmissions, 0);
    assert_eq!(report.next_seq, 13);
    let seqs: Vec<u8> = link.received.iter().map(|(_, s)| *s).collect();
    assert_eq!(seqs, vec![10, 11, 12]);
    let sent: Vec<Message> = link.received.into_iter().map(|(m, _)| m).collect();
    assert_eq!(sent, pages);
    assert_eq!(link.max_held_per_kind, 1);
}

#[test]
fn one_nack_one_retransmission() {
    let pages = three_pages();
    let mut link = ScriptedController::new([Some(true), Some(false), Some(true), Some(true)]);
    let report = wire::transfer_schedule(&pages, &mut link, 0, &TransferConfig::default()).unwrap();
    assert_eq!(report.retransmissions, 1);
    assert_eq!(report.transmissions, 4);
    assert_eq!(link.received[1], link.received[2]);
}

#[test]
fn silent_controller_times_out_after_three_attempts() {
    let pages = three_pages();
    let mut link = ScriptedController::new([None, None, None]);
    let err = wire::transfer_schedule(&pages, &mut link, 0, &TransferConfig::default()).unwrap_err();
    assert_eq!(err, TransferError::Timeout { page: 0, attempts: 3 });
    assert_eq!(link.received.len(), 3);
    assert_eq!(link.now, 1500);
}

#[test]
fn persistent_nack_fails() {
    let pages = three_pages();
    let mut link = ScriptedController::new([Some(false); 3]);
    let err = wire::transfer_schedule(&pages, &mut link, 0, &TransferConfig::default()).unwrap_err();
    assert_eq!(err, TransferError::NackReceived { page: 0, reason: 1 });
}

#[test]
fn stray_frames_do_not_ack() {
    let pages = three_pages();
    let mut link = ScriptedController::new([]);
    link.pending.push_back((Message::DistanceReport { cm: 20 }, 99));
    link.pending.push_back((Message::Ack { seq: 42 }, 42));
    let report = wire::transfer_schedule(&pages[..1], &mut link, 0, &TransferConfig::default()).unwrap();
    assert_eq!(report.transmissions, 1);
}

pub fn arb_message() -> impl Strategy<Value = (Message, u8)> {
    let kind = prop_oneof![Just(PageKind::Beat), Just(PageKind::Swing)];
    prop_oneof![
        (any::<u32>(), any::<u16>(), any::<u8>()).prop_map(|(t, b, s)| (Message::BpmReport { t_rel_ms: t, bpm_tenths: b }, s)),
        (any::<u32>(), any::<u16>(), any::<u8>()).prop_map(|(t, v, s)| (Message::StretchReport { t_rel_ms: t, value: v }, s)),
        (any::<u16>(), any::<u8>()).prop_map(|(cm, s)| (Message::DistanceReport { cm }, s)),
        (kind, any::<u16>(), any::<u16>(), proptest::collection::vec(any::<u32>(), 0..=30), any::<u8>()).prop_map(
            |(kind, page_index, total_pages, offsets, s)| (Message::SchedulePage { kind, page_index, total_pages, offsets }, s)
        ),
        (any::<u8>(), any::<u16>(), any::<u8>()).prop_map(|(st, d, s)| (Message::Vibrate { strength_255: st, duration_ms: d }, s)),
        any::<u8>().prop_map(|s| (Message::Swing, s)),
        any::<u8>().prop_map(|s| (Message::Start, s)),
        any::<u8>().prop_map(|s| (Message::Stop, s)),
        any::<u8>().prop_map(|s| (Message::Ack { seq: s }, s)),
        (any::<u8>(), any::<u8>()).prop_map(|(s, r)| (Message::Nack { seq: s, reason: r }, s)),
    ]
}

proptest! {
    #[test]
    fn round_trip((msg, seq) in arb_message()) {
        let frame = encode(&msg, seq).unwrap();
        prop_assert_eq!(decode(&frame), Ok((msg, seq)));
    }

    #[test]
    fn single_byte_corruption_is_rejected((msg, seq) in arb_message(), pos in any::<prop::sample::Index>(), delta in 1u8..=255) {
        let mut frame = encode(&msg, seq).unwrap();
        let i = pos.index(frame.len());
        frame[i] ^= delta;
        prop_assert!(decode(&frame).is_err());
    }

    #[test]
    fn deleted_byte_then_idle_resyncs((msg, seq) in arb_message(), pos in any::<prop::sample::Index>()) {
        let mut frame = encode(&msg, seq).unwrap();
        frame.remove(pos.index(frame.len()));
        let next = encode(&Message::Start, 0x5a).unwrap();
        let mut d = FrameDecoder::new();
        d.push(&frame);
        let mut decoded_original = false;
        while let Some(r) = d.next_frame() {
            if r == Ok((msg.clone(), seq)) {
                decoded_original = true;
            }
        }
        let _ = d.flush();
        prop_assert!(!decoded_original);
        d.push(&next);
        prop_assert_eq!(d.next_frame(), Some(Ok((Message::Start, 0x5a))));
    }
}

#[test]
fn truncated_frame_reports_truncated() {
    let frame = encode(&Message::Vibrate { strength_255: 1, duration_ms: 2 }, 4).unwrap();
    let mut d = FrameDecoder::new();
    d.push(&frame[..5]);
    assert_eq!(d.next_frame(), None);
    assert_eq!(d.flush(), Some(WireError::Truncated { needed: 8, have: 5 }));
}
