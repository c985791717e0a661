use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::aggregate::PeerRecord;

/// Tie-break order for events at the same instant: deliveries land before
/// steps complete, and training workers start before attackers so that an
/// attacker's reference model sees this instant's honest updates.
pub const PHASE_DELIVER: u8 = 0;
pub const PHASE_STEP_DONE: u8 = 1;
pub const PHASE_START_TRAINER: u8 = 2;
pub const PHASE_START_ATTACKER: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Deliver { to: usize, record: PeerRecord },
    StepDone { worker: usize },
    TryStart { worker: usize },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub phase: u8,
    pub seq: u64,
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

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.phase.cmp(&other.phase))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Discrete-event queue with a deterministic total order.
#[derive(Debug, Default)]
pub struct SimClock {
    queue: BinaryHeap<Reverse<Event>>,
    now: f64,
    next_seq: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Schedules an event; times in the past are clamped to now.
    pub fn schedule(&mut self, time: f64, phase: u8, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event {
            time: time.max(self.now),
            phase,
            seq,
            kind,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(e) = self.queue.pop()?;
        self.now = e.time;
        Some(e)
    }
}
