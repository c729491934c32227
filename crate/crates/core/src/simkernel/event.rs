use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::balancing::MoveReason;
use crate::placement::{QueryRecord, Ticket};
use crate::{ContentId, PeerId};

/// Why a replica is being copied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplicaCause {
    Placement,
    Balance(MoveReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Transfer {
    Response {
        request: u64,
    },
    Replica {
        ticket: Ticket,
        item: ContentId,
        source: PeerId,
        target: PeerId,
        bytes: u64,
        cause: ReplicaCause,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    QueryArrival(QueryRecord),
    TransferComplete(Transfer),
    ReportTick,
    BalanceTick,
    CleanupTick,
    /// Warm-up end: classification and initial placement.
    Classify,
    PeerLeave,
    PeerJoin(PeerId),
    ScenarioEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::QueryArrival(_) => "QueryArrival",
            EventKind::TransferComplete(_) => "TransferComplete",
            EventKind::ReportTick => "ReportTick",
            EventKind::BalanceTick => "BalanceTick",
            EventKind::CleanupTick => "CleanupTick",
            EventKind::Classify => "Classify",
            EventKind::PeerLeave => "PeerLeave",
            EventKind::PeerJoin(_) => "PeerJoin",
            EventKind::ScenarioEnd => "ScenarioEnd",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: f64,
    pub sequence: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, sequence) first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.sequence.cmp(&self.sequence))
    }
}

/// Pending events, dispatched in `(time, sequence)` order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
    now: f64,
}

impl EventQueue {
    pub fn now(&self) -> f64 {
        self.now
    }

    /// Schedules `kind` at `time`. Panics if `time` lies in the past.
    pub fn schedule(&mut self, time: f64, kind: EventKind) -> u64 {
        assert!(
            time >= self.now,
            "event {} scheduled at {time} before now {}",
            kind.name(),
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event { time, sequence, kind });
        sequence
    }

    pub fn pop(&mut self) -> Option<Event> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some(e)
    }

    /// Moves the clock forward to `t` without dispatching anything. Panics
    /// if an event earlier than `t` is still pending.
    pub fn advance_to(&mut self, t: f64) {
        assert!(
            self.peek_time().is_none_or(|next| next >= t),
            "advancing past a pending event"
        );
        self.now = self.now.max(t);
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_order_is_time_then_sequence() {
        let mut q = EventQueue::default();
        q.schedule(5.0, EventKind::ReportTick);
        q.schedule(1.0, EventKind::BalanceTick);
        q.schedule(5.0, EventKind::CleanupTick);
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.kind.name())).collect();
        assert_eq!(
            order,
            vec![(1.0, "BalanceTick"), (5.0, "ReportTick"), (5.0, "CleanupTick")]
        );
    }

    #[test]
    #[should_panic]
    fn past_events_are_rejected() {
        let mut q = EventQueue::default();
        q.schedule(5.0, EventKind::ReportTick);
        q.pop();
        q.schedule(4.0, EventKind::ReportTick);
    }
}
