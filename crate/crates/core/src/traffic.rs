//! Downlink packet sources and per-UE transmit queues.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum FlowKind {
    /// Constant bit rate: one payload every `interval_ms`.
    Cbr { interval_ms: f64 },
    /// Poisson arrivals at an average of `rate_bps`.
    Poisson { rate_bps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FlowSpec {
    pub payload_bytes: u32,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: FlowKind,
}

impl FlowSpec {
    /// 250-byte live-video CBR flow every 10 ms.
    pub const VIDEO: FlowSpec = FlowSpec::cbr(250, 10.0);
    /// 32-byte Poisson flow at 0.1 Mbit/s.
    pub const BACKGROUND: FlowSpec = FlowSpec::poisson(32, 100_000.0);

    pub const fn cbr(payload_bytes: u32, interval_ms: f64) -> Self {
        Self {
            payload_bytes,
            kind: FlowKind::Cbr { interval_ms },
        }
    }

    pub const fn poisson(payload_bytes: u32, rate_bps: f64) -> Self {
        Self {
            payload_bytes,
            kind: FlowKind::Poisson { rate_bps },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_bytes == 0 {
            return Err(Error::invalid("payload_bytes", "must be at least 1"));
        }
        let ok = match self.kind {
            FlowKind::Cbr { interval_ms } => interval_ms > 0.0 && interval_ms.is_finite(),
            FlowKind::Poisson { rate_bps } => rate_bps > 0.0 && rate_bps.is_finite(),
        };
        if !ok {
            return Err(Error::invalid(
                "flow",
                "interval_ms / rate_bps must be positive and finite",
            ));
        }
        Ok(())
    }

    /// Mean time between packets in ms.
    pub fn mean_interarrival_ms(&self) -> f64 {
        match self.kind {
            FlowKind::Cbr { interval_ms } => interval_ms,
            FlowKind::Poisson { rate_bps } => self.payload_bytes as f64 * 8.0 / rate_bps * 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Packet {
    pub id: u64,
    pub ue_id: usize,
    pub size_bytes: u32,
    pub created_at_ms: f64,
    pub delivered_at_ms: Option<f64>,
}

impl Packet {
    pub fn bits(&self) -> u64 {
        self.size_bytes as u64 * 8
    }

    pub fn delay_ms(&self) -> Option<f64> {
        self.delivered_at_ms.map(|d| d - self.created_at_ms)
    }
}

/// Stateful packet emitter for one UE's flow.
#[derive(Debug, Clone)]
pub struct FlowSource {
    spec: FlowSpec,
    ue_id: usize,
    next_at_ms: f64,
    next_id: u64,
}

impl FlowSource {
    /// CBR sources fire first at `start_ms + phase_ms`; Poisson sources draw
    /// their first arrival from `start_ms`.
    pub fn new<R: Rng + ?Sized>(
        spec: FlowSpec,
        ue_id: usize,
        start_ms: f64,
        phase_ms: f64,
        rng: &mut R,
    ) -> Self {
        let mut src = Self {
            spec,
            ue_id,
            next_at_ms: start_ms,
            next_id: 0,
        };
        match spec.kind {
            FlowKind::Cbr { .. } => src.next_at_ms += phase_ms,
            FlowKind::Poisson { .. } => src.next_at_ms += src.draw_gap(rng),
        }
        src
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    fn draw_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.spec.kind {
            FlowKind::Cbr { interval_ms } => interval_ms,
            FlowKind::Poisson { .. } => {
                let u: f64 = rng.gen();
                -self.spec.mean_interarrival_ms() * libm::log1p(-u)
            }
        }
    }

    /// Emits every packet due strictly before `until_ms`.
    pub fn emit_until<R: Rng + ?Sized>(
        &mut self,
        until_ms: f64,
        rng: &mut R,
        mut sink: impl FnMut(Packet),
    ) -> usize {
        let mut n = 0;
        while self.next_at_ms < until_ms {
            sink(Packet {
                id: self.next_id,
                ue_id: self.ue_id,
                size_bytes: self.spec.payload_bytes,
                created_at_ms: self.next_at_ms,
                delivered_at_ms: None,
            });
            self.next_id += 1;
            n += 1;
            self.next_at_ms += self.draw_gap(rng);
        }
        n
    }
}

/// All packets of `flow` created in `[t0, t1)`, CBR phase aligned to `t0`.
pub fn generate<R: Rng + ?Sized>(
    flow: &FlowSpec,
    ue_id: usize,
    t0_ms: f64,
    t1_ms: f64,
    rng: &mut R,
) -> Vec<Packet> {
    let mut out = Vec::new();
    if t1_ms <= t0_ms {
        return out;
    }
    FlowSource::new(*flow, ue_id, t0_ms, 0.0, rng).emit_until(t1_ms, rng, |p| out.push(p));
    out
}

/// Packet counters, either for the whole run or for the current window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct QueueCounters {
    pub generated: u64,
    pub delivered: u64,
    /// Tail drops at a full queue.
    pub dropped: u64,
    /// Packets flushed when the UE lost its radio link.
    pub lost: u64,
}

/// Finite FIFO with tail drop.
///
/// Grants are spent on whole packets only. Bits granted beyond the last
/// whole packet are kept as credit toward the head packet, which leaves the
/// queue once its full size has been granted.
#[derive(Debug, Clone)]
pub struct UeQueue {
    pending: VecDeque<Packet>,
    capacity: usize,
    pending_bits: u64,
    credit_bits: u64,
    total: QueueCounters,
    window: QueueCounters,
    delivered: Vec<Packet>,
}

impl UeQueue {
    pub const DEFAULT_CAPACITY: usize = 300;

    pub fn new(capacity: usize) -> Self {
        Self {
            pending: VecDeque::new(),
            capacity,
            pending_bits: 0,
            credit_bits: 0,
            total: QueueCounters::default(),
            window: QueueCounters::default(),
            delivered: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> impl ExactSizeIterator<Item = &Packet> {
        self.pending.iter()
    }

    pub fn dropped_count(&self) -> u64 {
        self.total.dropped
    }

    pub fn totals(&self) -> QueueCounters {
        self.total
    }

    pub fn window_counters(&self) -> QueueCounters {
        self.window
    }

    /// Packets delivered since the last [`UeQueue::start_window`].
    pub fn delivered(&self) -> &[Packet] {
        &self.delivered
    }

    /// Bits still to be granted before every queued packet can leave.
    pub fn backlog_bits(&self) -> u64 {
        self.pending_bits - self.credit_bits
    }

    /// Bits already granted toward the head packet.
    pub fn credit_bits(&self) -> u64 {
        self.credit_bits
    }

    pub fn queued_bits(&self) -> u64 {
        self.pending_bits
    }

    pub fn head(&self) -> Option<&Packet> {
        self.pending.front()
    }

    /// Counts the packet as generated; appends it unless the queue is full.
    pub fn enqueue(&mut self, pkt: Packet) -> bool {
        self.total.generated += 1;
        self.window.generated += 1;
        if self.pending.len() >= self.capacity {
            self.total.dropped += 1;
            self.window.dropped += 1;
            return false;
        }
        self.pending_bits += pkt.bits();
        self.pending.push_back(pkt);
        true
    }

    pub fn hol_delay_ms(&self, now_ms: f64) -> f64 {
        self.pending
            .front()
            .map_or(0.0, |p| (now_ms - p.created_at_ms).max(0.0))
    }

    /// Dequeues whole packets while their cumulative size fits in
    /// `grant_bits` plus the carried credit; a packet that does not fit
    /// stays at the head and the remainder becomes its credit.
    pub fn transmit(&mut self, grant_bits: u64, delivered_at_ms: f64) -> usize {
        let mut budget = grant_bits + self.credit_bits;
        let mut n = 0;
        while let Some(head) = self.pending.front() {
            let bits = head.bits();
            if bits > budget {
                break;
            }
            budget -= bits;
            let mut pkt = self.pending.pop_front().expect("head exists");
            self.pending_bits -= bits;
            pkt.delivered_at_ms = Some(delivered_at_ms);
            self.delivered.push(pkt);
            n += 1;
        }
        self.credit_bits = if self.pending.is_empty() { 0 } else { budget };
        self.total.delivered += n as u64;
        self.window.delivered += n as u64;
        n
    }

    /// Discards everything pending as lost; returns the count.
    pub fn flush_lost(&mut self) -> usize {
        let n = self.pending.len();
        self.pending.clear();
        self.pending_bits = 0;
        self.credit_bits = 0;
        self.total.lost += n as u64;
        self.window.lost += n as u64;
        n
    }

    /// Clears the per-window delivery log and counters.
    pub fn start_window(&mut self) {
        self.delivered.clear();
        self.window = QueueCounters::default();
    }

    /// `generated == delivered + dropped + lost + pending` over the run.
    pub fn is_conserved(&self) -> bool {
        let t = self.total;
        t.generated == t.delivered + t.dropped + t.lost + self.pending.len() as u64
    }
}
