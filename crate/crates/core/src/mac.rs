//! Abstract MAC: Bernoulli attempts with bounded retries, bounded FIFO
//! queues, and link-layer duplicate detection.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

/// Terminal causes of an end-to-end packet loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCause {
    /// Retries exhausted at some hop.
    MacDrop,
    /// A node had no route towards the destination.
    NoRoute,
    /// Dropped as a duplicate although it was not one.
    SpuriousDuplicate,
    QueueOverflow,
}

impl LossCause {
    pub const ALL: [LossCause; 4] = [
        LossCause::MacDrop,
        LossCause::NoRoute,
        LossCause::SpuriousDuplicate,
        LossCause::QueueOverflow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossCause::MacDrop => "mac_drop",
            LossCause::NoRoute => "no_route",
            LossCause::SpuriousDuplicate => "spurious_duplicate",
            LossCause::QueueOverflow => "queue_overflow",
        }
    }
}

impl fmt::Display for LossCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DupMode {
    /// Ring of recent (sender, seqno) pairs, no expiry, broadcasts numbered.
    Naive,
    /// Last seqno per neighbor with a lifetime, broadcasts unnumbered.
    Enhanced,
}

impl FromStr for DupMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(DupMode::Naive),
            "enhanced" => Ok(DupMode::Enhanced),
            other => Err(format!("unknown duplicate-detection mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacConfig {
    pub retries_r: u32,
    pub queue_capacity: usize,
    pub dup_mode: DupMode,
    pub seq_lifetime_ms: u64,
    pub per_attempt_delay_ms: u64,
    pub naive_ring_size: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            retries_r: 8,
            queue_capacity: 24,
            dup_mode: DupMode::Enhanced,
            seq_lifetime_ms: 30_000,
            per_attempt_delay_ms: 40,
            naive_ring_size: 8,
        }
    }
}

impl MacConfig {
    pub fn max_attempts(&self) -> u32 {
        self.retries_r + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub delivered: bool,
    pub attempts_used: u32,
    pub terminal_cause: Option<LossCause>,
}

/// Independent Bernoulli(`prr`) attempts until the first success or until
/// `1 + R` attempts are spent.
pub fn transmit<R: Rng + ?Sized>(prr: f64, config: &MacConfig, rng: &mut R) -> TxOutcome {
    let max = config.max_attempts();
    for attempt in 1..=max {
        if rng.random_bool(prr.clamp(0.0, 1.0)) {
            return TxOutcome {
                delivered: true,
                attempts_used: attempt,
                terminal_cause: None,
            };
        }
    }
    TxOutcome {
        delivered: false,
        attempts_used: max,
        terminal_cause: Some(LossCause::MacDrop),
    }
}

/// Unicast exchange with acknowledgments on the reverse link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckedTx {
    /// What the sender concludes from the ACKs it heard.
    pub sender: TxOutcome,
    /// 1-based attempt at which the receiver first got the frame.
    pub first_rx_attempt: Option<u32>,
    /// Copies of the frame the receiver got (retransmissions after lost ACKs
    /// arrive as duplicates).
    pub rx_copies: u32,
}

pub fn transmit_acked<R: Rng + ?Sized>(
    data_prr: f64,
    ack_prr: f64,
    config: &MacConfig,
    rng: &mut R,
) -> AckedTx {
    let max = config.max_attempts();
    let data_prr = data_prr.clamp(0.0, 1.0);
    let ack_prr = ack_prr.clamp(0.0, 1.0);
    let mut first_rx_attempt = None;
    let mut rx_copies = 0;
    for attempt in 1..=max {
        if rng.random_bool(data_prr) {
            rx_copies += 1;
            first_rx_attempt.get_or_insert(attempt);
            if rng.random_bool(ack_prr) {
                return AckedTx {
                    sender: TxOutcome {
                        delivered: true,
                        attempts_used: attempt,
                        terminal_cause: None,
                    },
                    first_rx_attempt,
                    rx_copies,
                };
            }
        }
    }
    AckedTx {
        sender: TxOutcome {
            delivered: false,
            attempts_used: max,
            terminal_cause: Some(LossCause::MacDrop),
        },
        first_rx_attempt,
        rx_copies,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("queue overflow")]
pub struct QueueOverflow<T>(pub T);

/// Bounded FIFO transmit queue.
#[derive(Debug, Clone, PartialEq)]
pub struct MacQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> MacQueue<T> {
    pub fn new(capacity: usize) -> Self {
        MacQueue {
            items: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    /// Append `item`, handing it back when the queue is full.
    pub fn enqueue(&mut self, item: T) -> Result<(), QueueOverflow<T>> {
        if self.items.len() >= self.capacity {
            return Err(QueueOverflow(item));
        }
        self.items.push_back(item);
        Ok(())
    }

    pub fn dequeue(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Per-node 8-bit sequence number counter, shared across destinations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeqCounter(u8);

impl SeqCounter {
    pub fn starting_at(v: u8) -> Self {
        SeqCounter(v)
    }

    pub fn next_seqno(&mut self) -> u8 {
        let v = self.0;
        self.0 = self.0.wrapping_add(1);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DupVerdict {
    Accept,
    DropDuplicate,
}

/// Receiver-side duplicate detection state.
#[derive(Debug, Clone, PartialEq)]
pub enum DupState {
    Naive {
        ring: VecDeque<(NodeId, u8)>,
        capacity: usize,
    },
    Enhanced {
        last: BTreeMap<NodeId, (u8, u64)>,
        lifetime_ms: u64,
    },
}

impl DupState {
    pub fn new(config: &MacConfig) -> Self {
        match config.dup_mode {
            DupMode::Naive => DupState::Naive {
                ring: VecDeque::with_capacity(config.naive_ring_size),
                capacity: config.naive_ring_size.max(1),
            },
            DupMode::Enhanced => DupState::Enhanced {
                last: BTreeMap::new(),
                lifetime_ms: config.seq_lifetime_ms,
            },
        }
    }

    /// Whether frames from a node in this mode carry a sequence number.
    pub fn numbers_broadcasts(mode: DupMode) -> bool {
        mode == DupMode::Naive
    }

    pub fn check_duplicate(
        &mut self,
        sender: NodeId,
        seqno: Option<u8>,
        is_broadcast: bool,
        now_ms: u64,
    ) -> DupVerdict {
        match self {
            DupState::Naive { ring, capacity } => {
                let Some(seq) = seqno else {
                    return DupVerdict::Accept;
                };
                if ring.contains(&(sender, seq)) {
                    return DupVerdict::DropDuplicate;
                }
                if ring.len() >= *capacity {
                    ring.pop_front();
                }
                ring.push_back((sender, seq));
                DupVerdict::Accept
            }
            DupState::Enhanced { last, lifetime_ms } => {
                if is_broadcast {
                    return DupVerdict::Accept;
                }
                let Some(seq) = seqno else {
                    return DupVerdict::Accept;
                };
                if let Some(&(stored, at)) = last.get(&sender) {
                    if stored == seq && now_ms.saturating_sub(at) <= *lifetime_ms {
                        return DupVerdict::DropDuplicate;
                    }
                }
                last.insert(sender, (seq, now_ms));
                DupVerdict::Accept
            }
        }
    }

    /// Number of remembered entries.
    pub fn len(&self) -> usize {
        match self {
            DupState::Naive { ring, .. } => ring.len(),
            DupState::Enhanced { last, .. } => last.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bytes of an immediate ACK (frame control, seqno, FCS).
pub const ACK_BASE_BYTES: usize = 5;
/// Extra bytes when the ACK names the sender of the acknowledged frame.
pub const ACK_SENDER_ADDR_BYTES: usize = 8;

pub fn ack_frame_bytes(carries_sender_addr: bool) -> usize {
    ACK_BASE_BYTES
        + if carries_sender_addr {
            ACK_SENDER_ADDR_BYTES
        } else {
            0
        }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlightFrame {
    pub sender: NodeId,
    pub seqno: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckVerdict {
    /// Frame received and the sender knows it.
    Acked,
    /// Sender took someone else's ACK as its own.
    FalselyAcked,
    NotAcked,
}

/// Resolve one ACK sent for the frame of `acked_sender` among frames that
/// were transmitted in the same slot.
pub fn ack_disambiguation(
    frames: &[InFlightFrame],
    acked_sender: NodeId,
    ack_carries_sender_addr: bool,
) -> Vec<(NodeId, AckVerdict)> {
    let acked_seq = frames
        .iter()
        .find(|f| f.sender == acked_sender)
        .map(|f| f.seqno);
    frames
        .iter()
        .map(|f| {
            let verdict = if f.sender == acked_sender {
                AckVerdict::Acked
            } else if !ack_carries_sender_addr && Some(f.seqno) == acked_seq {
                AckVerdict::FalselyAcked
            } else {
                AckVerdict::NotAcked
            };
            (f.sender, verdict)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn transmit_extremes() {
        let cfg = MacConfig::default();
        let mut rng = seeded(1);
        let ok = transmit(1.0, &cfg, &mut rng);
        assert_eq!(
            ok,
            TxOutcome {
                delivered: true,
                attempts_used: 1,
                terminal_cause: None
            }
        );
        let drop = transmit(0.0, &cfg, &mut rng);
        assert!(!drop.delivered);
        assert_eq!(drop.attempts_used, 9);
        assert_eq!(drop.terminal_cause, Some(LossCause::MacDrop));
    }

    #[test]
    fn transmit_drop_rate_matches_analytic() {
        let cfg = MacConfig::default();
        let mut rng = seeded(2024);
        let n = 1_000_000u32;
        let drops = (0..n)
            .filter(|_| !transmit(0.5, &cfg, &mut rng).delivered)
            .count() as f64;
        let p = 0.5f64.powi(9);
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((drops - n as f64 * p).abs() <= 3.0 * sigma, "drops {drops}");
    }

    #[test]
    fn acked_tx_without_reverse_link_duplicates_every_attempt() {
        let cfg = MacConfig::default();
        let mut rng = seeded(3);
        let out = transmit_acked(1.0, 0.0, &cfg, &mut rng);
        assert!(!out.sender.delivered);
        assert_eq!(out.first_rx_attempt, Some(1));
        assert_eq!(out.rx_copies, 9);
        let out = transmit_acked(1.0, 1.0, &cfg, &mut rng);
        assert!(out.sender.delivered);
        assert_eq!(out.rx_copies, 1);
    }

    #[test]
    fn queue_overflow_at_capacity() {
        let mut q = MacQueue::new(MacConfig::default().queue_capacity);
        for i in 0..24 {
            assert!(q.enqueue(i).is_ok());
        }
        assert_eq!(q.enqueue(24), Err(QueueOverflow(24)));
        assert_eq!(q.dequeue(), Some(0));
        assert!(q.enqueue(25).is_ok());

        let mut one = MacQueue::new(1);
        assert!(one.enqueue('a').is_ok());
        assert!(one.enqueue('b').is_err());
        assert_eq!(one.dequeue(), Some('a'));
        assert!(one.enqueue('c').is_ok());
    }

    #[test]
    fn seq_counter_wraps() {
        let mut s = SeqCounter::starting_at(255);
        assert_eq!(s.next_seqno(), 255);
        assert_eq!(s.next_seqno(), 0);
    }

    fn wrap_scenario(mode: DupMode) -> Vec<DupVerdict> {
        let cfg = MacConfig {
            dup_mode: mode,
            ..MacConfig::default()
        };
        let mut b = DupState::new(&cfg);
        let a = NodeId(1);
        let mut seq = SeqCounter::default();
        let mut verdicts = vec![b.check_duplicate(a, Some(seq.next_seqno()), false, 0)];
        // 255 more frames from A to other nodes at 5 Hz, never seen by B
        for _ in 0..255 {
            seq.next_seqno();
        }
        verdicts.push(b.check_duplicate(a, Some(seq.next_seqno()), false, 256 * 200));
        verdicts
    }

    #[test]
    fn wrapped_seqno_is_spurious_under_naive_only() {
        assert_eq!(
            wrap_scenario(DupMode::Naive),
            vec![DupVerdict::Accept, DupVerdict::DropDuplicate]
        );
        assert_eq!(
            wrap_scenario(DupMode::Enhanced),
            vec![DupVerdict::Accept, DupVerdict::Accept]
        );
    }

    #[test]
    fn enhanced_forgets_older_seqnos_once_a_newer_one_is_heard() {
        let cfg = MacConfig::default();
        let mut b = DupState::new(&cfg);
        let a = NodeId(1);
        assert_eq!(b.check_duplicate(a, Some(0), false, 0), DupVerdict::Accept);
        assert_eq!(
            b.check_duplicate(a, Some(7), false, 1_000),
            DupVerdict::Accept
        );
        assert_eq!(
            b.check_duplicate(a, Some(0), false, 2_000),
            DupVerdict::Accept
        );
    }

    #[test]
    fn true_duplicates_dropped_in_both_modes() {
        for mode in [DupMode::Naive, DupMode::Enhanced] {
            let cfg = MacConfig {
                dup_mode: mode,
                ..MacConfig::default()
            };
            let mut s = DupState::new(&cfg);
            assert_eq!(
                s.check_duplicate(NodeId(3), Some(42), false, 0),
                DupVerdict::Accept
            );
            assert_eq!(
                s.check_duplicate(NodeId(3), Some(42), false, 5_000),
                DupVerdict::DropDuplicate
            );
        }
    }

    #[test]
    fn enhanced_seqno_expires() {
        let mut s = DupState::new(&MacConfig::default());
        assert_eq!(
            s.check_duplicate(NodeId(3), Some(9), false, 0),
            DupVerdict::Accept
        );
        assert_eq!(
            s.check_duplicate(NodeId(3), Some(9), false, 30_000),
            DupVerdict::DropDuplicate
        );
        assert_eq!(
            s.check_duplicate(NodeId(3), Some(9), false, 61_000),
            DupVerdict::Accept
        );
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn enhanced_accepts_broadcasts_and_naive_ring_is_bounded() {
        let mut e = DupState::new(&MacConfig::default());
        for _ in 0..3 {
            assert_eq!(
                e.check_duplicate(NodeId(1), None, true, 0),
                DupVerdict::Accept
            );
        }
        assert!(e.is_empty());

        let cfg = MacConfig {
            dup_mode: DupMode::Naive,
            ..MacConfig::default()
        };
        let mut n = DupState::new(&cfg);
        for s in 0..20u8 {
            n.check_duplicate(NodeId(s as u16), Some(s), s % 2 == 0, 0);
        }
        assert_eq!(n.len(), 8);
        // oldest entries fell out of the ring
        assert_eq!(
            n.check_duplicate(NodeId(0), Some(0), false, 0),
            DupVerdict::Accept
        );
    }

    #[test]
    fn ack_resolution() {
        let single = [InFlightFrame {
            sender: NodeId(1),
            seqno: 4,
        }];
        for addr in [false, true] {
            assert_eq!(
                ack_disambiguation(&single, NodeId(1), addr),
                vec![(NodeId(1), AckVerdict::Acked)]
            );
        }
        let pair = [
            InFlightFrame {
                sender: NodeId(1),
                seqno: 4,
            },
            InFlightFrame {
                sender: NodeId(2),
                seqno: 4,
            },
        ];
        assert_eq!(
            ack_disambiguation(&pair, NodeId(1), false),
            vec![
                (NodeId(1), AckVerdict::Acked),
                (NodeId(2), AckVerdict::FalselyAcked)
            ]
        );
        assert_eq!(
            ack_disambiguation(&pair, NodeId(1), true),
            vec![
                (NodeId(1), AckVerdict::Acked),
                (NodeId(2), AckVerdict::NotAcked)
            ]
        );
        assert_eq!(ack_frame_bytes(true) - ack_frame_bytes(false), 8);
    }

    #[test]
    fn dup_mode_parse() {
        assert_eq!("NAIVE".parse::<DupMode>(), Ok(DupMode::Naive));
        assert!("x".parse::<DupMode>().is_err());
    }
}
