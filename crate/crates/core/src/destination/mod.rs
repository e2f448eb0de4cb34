//! Destination: queues incoming CNs and pulls content for each one.

pub mod queue;
pub mod replica;

use std::collections::HashSet;
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::digest::Digest;
use crate::fetch::{FetchError, ResourceFetcher};
use crate::notification::{ChangeNotification, EventKind};
use crate::uri::NormalizedUri;

pub use queue::{CnQueue, QueueOverflow, QueueStats, Queued, DEFAULT_INTERVAL_MS};
pub use replica::{FileReplica, MemoryReplica, ReplicaStore};

pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_BASE_MS: u64 = 100;

#[derive(Debug, Error)]
pub enum DestinationError {
    #[error("replica store: {0}")]
    Replica(#[from] io::Error),
}

/// Waits between fetch retries.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, ms: u64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, ms: u64) {
        thread::sleep(Duration::from_millis(ms));
    }
}

/// Records nothing and returns at once; simulated runs account for backoff
/// through [`Processed::backoff_ms`].
#[derive(Debug, Default, Clone, Copy)]
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _ms: u64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: DEFAULT_RETRIES,
            backoff_base_ms: DEFAULT_BACKOFF_BASE_MS,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry `n` (0-based): base, 2*base, 4*base, ...
    pub fn backoff(&self, n: u32) -> u64 {
        self.backoff_base_ms.saturating_mul(1u64 << n.min(32))
    }
}

/// Simulated cost of one fetch round trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    Constant(u64),
    Uniform { min_ms: u64, max_ms: u64 },
}

impl LatencyModel {
    pub const NEAR: LatencyModel = LatencyModel::Constant(5);
    pub const FAR: LatencyModel = LatencyModel::Constant(40);

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            LatencyModel::Constant(ms) => ms,
            LatencyModel::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.random_range(min_ms..=max_ms),
            LatencyModel::Uniform { min_ms, .. } => min_ms,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LatencyModel::Constant(ms) => ms as f64,
            LatencyModel::Uniform { min_ms, max_ms } => (min_ms + max_ms.max(min_ms)) as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Applied,
    Deleted,
    /// The pulled digest equals the replica's; nothing written.
    SkippedStale,
    FetchFailed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Processed {
    pub cn: ChangeNotification,
    pub outcome: Outcome,
    /// Fetch attempts made, 0 for deletes.
    pub fetch_attempts: u32,
    pub fetched_bytes: u64,
    pub backoff_ms: u64,
    /// The CN went back to the queue after exhausting its retries.
    pub requeued: bool,
    /// The CN was dropped for good after its second round of retries.
    pub lost: bool,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DestinationCounters {
    pub processed: u64,
    pub applied: u64,
    pub deleted: u64,
    pub skipped_stale: u64,
    pub fetch_failed: u64,
    pub requeued: u64,
    pub lost: u64,
    pub fetches: u64,
    pub fetched_bytes: u64,
}

impl DestinationCounters {
    fn record(&mut self, p: &Processed) {
        self.processed += 1;
        self.fetches += u64::from(p.fetch_attempts);
        self.fetched_bytes += p.fetched_bytes;
        match p.outcome {
            Outcome::Applied => self.applied += 1,
            Outcome::Deleted => self.deleted += 1,
            Outcome::SkippedStale => self.skipped_stale += 1,
            Outcome::FetchFailed => self.fetch_failed += 1,
        }
        self.requeued += u64::from(p.requeued);
        self.lost += u64::from(p.lost);
    }
}

pub struct Destination {
    name: String,
    queue: Arc<CnQueue>,
    replica: Mutex<Box<dyn ReplicaStore>>,
    fetcher: Arc<dyn ResourceFetcher>,
    sleeper: Arc<dyn Sleeper>,
    retry: RetryPolicy,
    in_flight: Mutex<HashSet<NormalizedUri>>,
    counters: Mutex<DestinationCounters>,
}

impl Destination {
    pub fn new(
        name: impl Into<String>,
        clock: Arc<dyn Clock>,
        interval_ms: u64,
        replica: Box<dyn ReplicaStore>,
        fetcher: Arc<dyn ResourceFetcher>,
    ) -> Self {
        Destination {
            name: name.into(),
            queue: Arc::new(CnQueue::new(clock, interval_ms)),
            replica: Mutex::new(replica),
            fetcher,
            sleeper: Arc::new(ThreadSleeper),
            retry: RetryPolicy::default(),
            in_flight: Mutex::new(HashSet::new()),
            counters: Mutex::new(DestinationCounters::default()),
        }
    }

    pub fn with_queue(mut self, queue: CnQueue) -> Self {
        self.queue = Arc::new(queue);
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The queue, usable as a broker sink.
    pub fn queue(&self) -> &Arc<CnQueue> {
        &self.queue
    }

    pub fn on_cn(&self, cn: ChangeNotification) -> Result<usize, QueueOverflow> {
        self.queue.on_cn(cn)
    }

    pub fn counters(&self) -> DestinationCounters {
        *self.counters.lock().expect("counter lock poisoned")
    }

    pub fn queue_stats(&self) -> QueueStats {
        self.queue.stats()
    }

    pub fn replica_digest(&self, uri: &NormalizedUri) -> Option<Digest> {
        self.replica.lock().expect("replica lock poisoned").digest(uri)
    }

    pub fn replica_body(&self, uri: &NormalizedUri) -> io::Result<Option<Vec<u8>>> {
        self.replica.lock().expect("replica lock poisoned").body(uri)
    }

    /// Sorted `(uri, digest)` pairs of the replica.
    pub fn replica_digest_listing(&self) -> Vec<(NormalizedUri, Digest)> {
        self.replica.lock().expect("replica lock poisoned").listing()
    }

    /// Takes the next eligible CN off the queue and processes it. Returns
    /// `None` when nothing is eligible.
    pub fn process_one(&self) -> Result<Option<Processed>, DestinationError> {
        let item = {
            let mut in_flight = self.in_flight.lock().expect("in-flight lock poisoned");
            let Some(item) = self.queue.pop_ready(&in_flight) else {
                return Ok(None);
            };
            in_flight.insert(item.cn.uri.clone());
            item
        };
        let uri = item.cn.uri.clone();
        let result = self.handle(item);
        self.in_flight.lock().expect("in-flight lock poisoned").remove(&uri);
        let processed = result?;
        self.counters.lock().expect("counter lock poisoned").record(&processed);
        Ok(Some(processed))
    }

    fn handle(&self, item: Queued) -> Result<Processed, DestinationError> {
        let mut p = Processed {
            cn: item.cn,
            outcome: Outcome::FetchFailed,
            fetch_attempts: 0,
            fetched_bytes: 0,
            backoff_ms: 0,
            requeued: false,
            lost: false,
        };
        if p.cn.kind == EventKind::Delete {
            self.replica.lock().expect("replica lock poisoned").remove(&p.cn.uri)?;
            p.outcome = Outcome::Deleted;
            return Ok(p);
        }
        let mut last_err = None;
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                let wait = self.retry.backoff(attempt - 1);
                self.sleeper.sleep(wait);
                p.backoff_ms += wait;
            }
            p.fetch_attempts += 1;
            match self.fetcher.fetch(&p.cn.uri) {
                Ok(rv) => {
                    p.fetched_bytes = rv.body.len() as u64;
                    let mut replica = self.replica.lock().expect("replica lock poisoned");
                    if replica.digest(&p.cn.uri) == Some(rv.digest) {
                        p.outcome = Outcome::SkippedStale;
                    } else {
                        replica.put(&p.cn.uri, &rv.body)?;
                        p.outcome = Outcome::Applied;
                    }
                    return Ok(p);
                }
                Err(FetchError::Gone(_)) | Err(FetchError::NotFound(_)) => {
                    // a later delete CN is on its way or already applied
                    self.replica.lock().expect("replica lock poisoned").remove(&p.cn.uri)?;
                    p.outcome = Outcome::Deleted;
                    return Ok(p);
                }
                Err(e @ FetchError::Unavailable(_)) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            log::warn!("{}: fetch of {} failed: {e}", self.name, p.cn.uri);
        }
        if item.requeued || self.queue.requeue(p.cn.clone()).is_err() {
            p.lost = true;
        } else {
            p.requeued = true;
        }
        Ok(p)
    }

    /// Processes CNs with `workers` threads until `stop` is set and the
    /// queue is empty. Distinct workers never hold the same URI.
    pub fn run_consumer(&self, workers: usize, stop: &AtomicBool) -> Result<QueueStats, DestinationError> {
        let poll = Duration::from_millis(20);
        let failure: Mutex<Option<DestinationError>> = Mutex::new(None);
        thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                scope.spawn(|| loop {
                    if failure.lock().expect("failure lock poisoned").is_some() {
                        return;
                    }
                    match self.process_one() {
                        Ok(Some(_)) => continue,
                        Ok(None) => {
                            if stop.load(Ordering::SeqCst) && self.queue.is_empty() {
                                return;
                            }
                            if !self.queue.wait_nonempty(poll) || !self.queue.is_empty() {
                                // items present but all blocked on in-flight URIs
                                thread::sleep(Duration::from_millis(1));
                            }
                        }
                        Err(e) => {
                            *failure.lock().expect("failure lock poisoned") = Some(e);
                            return;
                        }
                    }
                });
            }
        });
        match failure.into_inner().expect("failure lock poisoned") {
            Some(e) => Err(e),
            None => Ok(self.queue.stats()),
        }
    }
}
