//! Event queue with a total order on (time, priority, sequence).

use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Fixed tie-break order for events scheduled on the same cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    PeripheralRefill = 0,
    SampleReady = 1,
    HostResume = 2,
    Marker = 3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scheduled<E> {
    pub time: u64,
    pub priority: Priority,
    pub seq: u64,
    pub event: E,
}

impl<E: Eq> Ord for Scheduled<E> {
    // Reversed so the max-heap pops the earliest key.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.priority, other.seq).cmp(&(self.time, self.priority, self.seq))
    }
}

impl<E: Eq> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EventQueue<E: Eq> {
    heap: BinaryHeap<Scheduled<E>>,
    next_seq: u64,
}

impl<E: Eq> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E: Eq> EventQueue<E> {
    pub fn push(&mut self, time: u64, priority: Priority, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled {
            time,
            priority,
            seq,
            event,
        });
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|s| s.time)
    }

    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        self.heap.pop()
    }

    pub fn clear(&mut self) {
        self.heap.clear();
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
    fn orders_by_time_priority_then_sequence() {
        let mut q = EventQueue::default();
        q.push(10, Priority::Marker, "m");
        q.push(10, Priority::HostResume, "h1");
        q.push(5, Priority::Marker, "early");
        q.push(10, Priority::PeripheralRefill, "r");
        q.push(10, Priority::HostResume, "h2");
        q.push(10, Priority::SampleReady, "s");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|s| s.event)).collect();
        assert_eq!(order, vec!["early", "r", "s", "h1", "h2", "m"]);
    }
}
