//! Fan-out of simulator events to any number of subscribers.
//!
//! Each subscriber owns a bounded queue. When it is full, the oldest
//! telemetry item is discarded and a gap marker takes its place; procedure,
//! interlock and measurement events are never discarded.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::Duration;

use probestation_core::SimEvent;

pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum TelemetryItem {
    Event { seq: u64, event: SimEvent },
    /// `dropped` consecutive telemetry events were discarded here.
    Gap { dropped: u64 },
}

impl TelemetryItem {
    fn droppable(&self) -> bool {
        matches!(self, TelemetryItem::Event { event, .. } if !event.is_lifecycle())
    }
}

#[derive(Debug)]
struct Queue {
    items: Mutex<QueueState>,
    ready: Condvar,
}

#[derive(Debug)]
struct QueueState {
    buf: VecDeque<TelemetryItem>,
    capacity: usize,
    closed: bool,
}

impl QueueState {
    fn events(&self) -> usize {
        self.buf.iter().filter(|i| !matches!(i, TelemetryItem::Gap { .. })).count()
    }

    fn push(&mut self, item: TelemetryItem) {
        if self.events() >= self.capacity {
            if let Some(i) = self.buf.iter().position(TelemetryItem::droppable) {
                self.buf.remove(i);
                match i.checked_sub(1).and_then(|j| self.buf.get_mut(j)) {
                    Some(TelemetryItem::Gap { dropped }) => *dropped += 1,
                    _ => self.buf.insert(i, TelemetryItem::Gap { dropped: 1 }),
                }
            }
        }
        self.buf.push_back(item);
    }
}

/// Receiving end for one subscriber. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<TelemetryItem> {
        self.queue.items.lock().unwrap().buf.pop_front()
    }

    /// Waits up to `timeout` for an item. `None` on timeout or once the bus
    /// is closed and drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<TelemetryItem> {
        let guard = self.queue.items.lock().unwrap();
        let (mut guard, _) = self
            .queue
            .ready
            .wait_timeout_while(guard, timeout, |q| q.buf.is_empty() && !q.closed)
            .unwrap();
        guard.buf.pop_front()
    }

    pub fn drain(&self) -> Vec<TelemetryItem> {
        self.queue.items.lock().unwrap().buf.drain(..).collect()
    }

    pub fn is_closed(&self) -> bool {
        self.queue.items.lock().unwrap().closed
    }
}

#[derive(Debug, Default)]
pub struct TelemetryBus {
    subscribers: Mutex<Vec<Weak<Queue>>>,
}

impl TelemetryBus {
    pub fn subscribe(&self, capacity: usize) -> Subscription {
        let queue = Arc::new(Queue {
            items: Mutex::new(QueueState {
                buf: VecDeque::new(),
                capacity: capacity.max(1),
                closed: false,
            }),
            ready: Condvar::new(),
        });
        self.subscribers.lock().unwrap().push(Arc::downgrade(&queue));
        Subscription { queue }
    }

    /// Delivers one event to every live subscriber.
    pub fn publish(&self, seq: u64, event: &SimEvent) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|w| w.strong_count() > 0);
        for q in subs.iter().filter_map(Weak::upgrade) {
            q.items.lock().unwrap().push(TelemetryItem::Event {
                seq,
                event: event.clone(),
            });
            q.ready.notify_all();
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().unwrap().iter().filter(|w| w.strong_count() > 0).count()
    }

    /// Wakes every subscriber; later `recv_timeout` calls return at once
    /// when their queue is empty.
    pub fn close(&self) {
        for q in self.subscribers.lock().unwrap().iter().filter_map(Weak::upgrade) {
            q.items.lock().unwrap().closed = true;
            q.ready.notify_all();
        }
    }
}
