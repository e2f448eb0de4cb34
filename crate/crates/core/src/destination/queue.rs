//! FIFO queue of received CNs with per-interval length metrics.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use crate::broker::{Sink, SinkError};
use crate::clock::Clock;
use crate::notification::ChangeNotification;
use crate::uri::NormalizedUri;

/// Five minutes.
pub const DEFAULT_INTERVAL_MS: u64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("queue is at its hard cap of {cap} CNs")]
pub struct QueueOverflow {
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Queued {
    pub cn: ChangeNotification,
    /// Set once the CN went back to the tail after a failed fetch.
    pub requeued: bool,
}

/// Per-interval queue metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub current_len: usize,
    /// `(interval_index, max_len)` for every closed interval.
    pub max_len_per_interval: Vec<(u64, usize)>,
    /// Whether the queue was empty at the end of each closed interval.
    pub drained_at_interval_end: Vec<bool>,
}

impl QueueStats {
    pub fn max_queue(&self) -> usize {
        self.max_len_per_interval.iter().map(|(_, m)| *m).max().unwrap_or(0)
    }

    pub fn all_drained(&self) -> bool {
        self.drained_at_interval_end.iter().all(|d| *d)
    }

    /// `interval_index,max_queue,drained` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval_index,max_queue,drained\n");
        for ((idx, max), drained) in self.max_len_per_interval.iter().zip(&self.drained_at_interval_end) {
            let _ = writeln!(out, "{idx},{max},{drained}");
        }
        out
    }
}

/// Tracks the running maximum of the queue length per interval. Every
/// enqueue and dequeue reports the new length; an interval closes when the
/// first observation of a later interval arrives or on snapshot.
#[derive(Debug, Clone)]
struct IntervalTracker {
    start_ms: u64,
    interval_ms: u64,
    closed: Vec<(usize, bool)>,
    current_idx: u64,
    current_max: usize,
    len: usize,
}

impl IntervalTracker {
    fn new(start_ms: u64, interval_ms: u64) -> Self {
        IntervalTracker {
            start_ms,
            interval_ms: interval_ms.max(1),
            closed: Vec::new(),
            current_idx: 0,
            current_max: 0,
            len: 0,
        }
    }

    fn index_of(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.start_ms) / self.interval_ms
    }

    fn roll_to(&mut self, idx: u64) {
        while self.current_idx < idx {
            self.closed.push((self.current_max, self.len == 0));
            self.current_idx += 1;
            self.current_max = self.len;
        }
    }

    fn observe(&mut self, now_ms: u64, len: usize) {
        let idx = self.index_of(now_ms);
        self.roll_to(idx);
        self.len = len;
        self.current_max = self.current_max.max(len);
    }

    fn snapshot(&self, now_ms: u64) -> QueueStats {
        let mut t = self.clone();
        let idx = t.index_of(now_ms);
        t.roll_to(idx);
        QueueStats {
            current_len: t.len,
            max_len_per_interval: t.closed.iter().enumerate().map(|(i, (m, _))| (i as u64, *m)).collect(),
            drained_at_interval_end: t.closed.iter().map(|(_, d)| *d).collect(),
        }
    }
}

struct Inner {
    items: VecDeque<Queued>,
    tracker: IntervalTracker,
    enqueued: u64,
    closed: bool,
}

/// The Destination's inbox. Enqueueing never blocks on processing.
pub struct CnQueue {
    inner: Mutex<Inner>,
    ready: Condvar,
    clock: Arc<dyn Clock>,
    cap: Option<usize>,
}

impl CnQueue {
    pub fn new(clock: Arc<dyn Clock>, interval_ms: u64) -> Self {
        let start = clock.now_ms();
        CnQueue {
            inner: Mutex::new(Inner {
                items: VecDeque::new(),
                tracker: IntervalTracker::new(start, interval_ms),
                enqueued: 0,
                closed: false,
            }),
            ready: Condvar::new(),
            clock,
            cap: None,
        }
    }

    /// Starts interval 0 at `start_ms` instead of the construction time.
    pub fn with_start(self, start_ms: u64) -> Self {
        {
            let mut inner = self.lock();
            let interval = inner.tracker.interval_ms;
            inner.tracker = IntervalTracker::new(start_ms, interval);
        }
        self
    }

    pub fn with_hard_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("queue lock poisoned")
    }

    /// Appends a CN; returns the new length.
    pub fn on_cn(&self, cn: ChangeNotification) -> Result<usize, QueueOverflow> {
        self.push(Queued { cn, requeued: false })
    }

    fn push(&self, item: Queued) -> Result<usize, QueueOverflow> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        if let Some(cap) = self.cap {
            if inner.items.len() >= cap {
                return Err(QueueOverflow { cap });
            }
        }
        inner.items.push_back(item);
        inner.enqueued += 1;
        let len = inner.items.len();
        inner.tracker.observe(now, len);
        drop(inner);
        self.ready.notify_one();
        Ok(len)
    }

    /// Puts a CN whose fetch failed back at the tail, marked as requeued.
    pub fn requeue(&self, cn: ChangeNotification) -> Result<usize, QueueOverflow> {
        self.push(Queued { cn, requeued: true })
    }

    pub fn try_pop(&self) -> Option<Queued> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let item = inner.items.pop_front()?;
        let len = inner.items.len();
        inner.tracker.observe(now, len);
        Some(item)
    }

    /// Removes the first CN that may be processed while the URIs in
    /// `in_flight` are being worked on: its URI is not in flight and no
    /// earlier queued CN has the same URI. Preserves per-URI order.
    pub fn pop_ready(&self, in_flight: &HashSet<NormalizedUri>) -> Option<Queued> {
        if in_flight.is_empty() {
            return self.try_pop();
        }
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let mut blocked: HashSet<&NormalizedUri> = in_flight.iter().collect();
        let mut pick = None;
        for (i, item) in inner.items.iter().enumerate() {
            if blocked.contains(&item.cn.uri) {
                continue;
            }
            if blocked.insert(&item.cn.uri) {
                pick = Some(i);
                break;
            }
        }
        let item = inner.items.remove(pick?)?;
        let len = inner.items.len();
        inner.tracker.observe(now, len);
        Some(item)
    }

    /// Blocks until the queue is non-empty, closed, or `timeout` passes.
    pub fn wait_nonempty(&self, timeout: Duration) -> bool {
        let inner = self.lock();
        let (inner, _) = self
            .ready
            .wait_timeout_while(inner, timeout, |i| i.items.is_empty() && !i.closed)
            .expect("queue lock poisoned");
        !inner.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total CNs accepted, including requeues.
    pub fn enqueued(&self) -> u64 {
        self.lock().enqueued
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn stats(&self) -> QueueStats {
        let now = self.clock.now_ms();
        self.lock().tracker.snapshot(now)
    }

    /// Stats with every interval ending at or before `end_ms` closed.
    pub fn stats_until(&self, end_ms: u64) -> QueueStats {
        self.lock().tracker.snapshot(end_ms)
    }
}

impl Sink for CnQueue {
    fn try_deliver(&self, cn: &ChangeNotification) -> Result<(), SinkError> {
        if self.lock().closed {
            return Err(SinkError::Closed);
        }
        self.on_cn(cn.clone()).map(|_| ()).map_err(|_| SinkError::Overflow)
    }

    fn is_closed(&self) -> bool {
        self.lock().closed
    }

    fn close(&self) {
        CnQueue::close(self)
    }
}
