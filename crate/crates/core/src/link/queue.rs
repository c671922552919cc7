use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::time::Nanos;

struct Entry<E> {
    due: Nanos,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap: the earliest (due, seq) must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.due.cmp(&self.due).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Deterministic discrete-event queue. Events fire in non-decreasing due time,
/// ties in insertion order. Owns the run's random stream.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: Nanos,
    next_seq: u64,
    rng: ChaCha8Rng,
}

impl<E> EventQueue<E> {
    pub fn new(seed: u64) -> Self {
        Self { heap: BinaryHeap::new(), now: 0, next_seq: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_due(&self) -> Option<Nanos> {
        self.heap.peek().map(|e| e.due)
    }

    /// Schedules `event` at `due`. Times in the past are clamped to now.
    pub fn schedule(&mut self, due: Nanos, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { due: due.max(self.now), seq, event });
    }

    pub fn schedule_in(&mut self, delay: Nanos, event: E) {
        self.schedule(self.now + delay, event);
    }

    /// Pops the next event due at or before `until`, moving the clock to it.
    pub fn pop_until(&mut self, until: Nanos) -> Option<(Nanos, E)> {
        if self.heap.peek()?.due > until {
            return None;
        }
        let entry = self.heap.pop()?;
        self.now = entry.due;
        Some((entry.due, entry.event))
    }

    /// Moves the clock forward without firing anything.
    pub fn set_time(&mut self, until: Nanos) {
        debug_assert!(until >= self.now);
        self.now = self.now.max(until);
    }

    /// Fires every event due at or before `until` and leaves the clock there.
    pub fn advance(&mut self, until: Nanos) -> Vec<(Nanos, E)> {
        let mut fired = Vec::new();
        while let Some(ev) = self.pop_until(until) {
            fired.push(ev);
        }
        self.set_time(until);
        fired
    }
}
