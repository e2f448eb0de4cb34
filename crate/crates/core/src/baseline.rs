//! Simulated push: the Source appends CNs to a feed and pings a hub, the hub
//! fetches the feed and pushes new entries to registered callbacks, and
//! Destinations pull content as usual.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::broker::{Broker, BrokerError, Publisher, Sink};
use crate::changeset::Changeset;
use crate::channel::ChannelPath;
use crate::clock::VirtualClock;
use crate::destination::{Destination, DestinationError, MemoryReplica, NoSleep};
use crate::digest::Digest;
use crate::notification::ChangeNotification;
use crate::source::Source;
use crate::uri::NormalizedUri;

/// Bytes charged per feed entry on top of the CN frame.
pub const DEFAULT_ENVELOPE_BYTES: u64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arch {
    SimulatedPush,
    RealPush,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::SimulatedPush => "simulated-push",
            Arch::RealPush => "real-push",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Interaction classes. Simulated push uses ping, feed fetch, callback push
/// and resource pull; real push uses CN publish, CN delivery and resource
/// pull. `FeedAppend` is the Source's hand-off of a CN to its feed, the
/// counterpart of a publish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Interaction {
    FeedAppend,
    Ping,
    FeedFetch,
    CallbackPush,
    CnPublish,
    CnDeliver,
    ResourcePull,
}

impl Interaction {
    pub fn as_str(self) -> &'static str {
        match self {
            Interaction::FeedAppend => "feed_append",
            Interaction::Ping => "ping",
            Interaction::FeedFetch => "feed_fetch",
            Interaction::CallbackPush => "callback_push",
            Interaction::CnPublish => "cn_publish",
            Interaction::CnDeliver => "cn_deliver",
            Interaction::ResourcePull => "resource_pull",
        }
    }

    /// Whether the interaction moves change notifications rather than content.
    pub fn is_cn_side(self) -> bool {
        !matches!(self, Interaction::ResourcePull)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub count: u64,
    pub bytes: u64,
}

/// Monotone interaction counters per architecture and class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLedger {
    counters: BTreeMap<(Arch, Interaction), Counter>,
    failures: BTreeMap<(Arch, Interaction), u64>,
}

impl InteractionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, arch: Arch, class: Interaction, count: u64, bytes: u64) {
        let c = self.counters.entry((arch, class)).or_default();
        c.count += count;
        c.bytes += bytes;
    }

    pub fn record_failure(&mut self, arch: Arch, class: Interaction) {
        *self.failures.entry((arch, class)).or_default() += 1;
    }

    pub fn get(&self, arch: Arch, class: Interaction) -> Counter {
        self.counters.get(&(arch, class)).copied().unwrap_or_default()
    }

    pub fn count(&self, arch: Arch, class: Interaction) -> u64 {
        self.get(arch, class).count
    }

    pub fn failures(&self, arch: Arch, class: Interaction) -> u64 {
        self.failures.get(&(arch, class)).copied().unwrap_or(0)
    }

    /// Sum of CN-side interaction counts for `arch`.
    pub fn cn_side(&self, arch: Arch) -> u64 {
        self.counters
            .iter()
            .filter(|((a, c), _)| *a == arch && c.is_cn_side())
            .map(|(_, v)| v.count)
            .sum()
    }

    pub fn merge(&mut self, other: &InteractionLedger) {
        for (k, v) in &other.counters {
            let c = self.counters.entry(*k).or_default();
            c.count += v.count;
            c.bytes += v.bytes;
        }
        for (k, v) in &other.failures {
            *self.failures.entry(*k).or_default() += v;
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (Arch, Interaction, Counter)> + '_ {
        self.counters.iter().map(|((a, c), v)| (*a, *c, *v))
    }

    /// `class,arch,count,bytes` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,arch,count,bytes\n");
        for (arch, class, c) in self.rows() {
            let _ = writeln!(out, "{},{},{},{}", class.as_str(), arch, c.count, c.bytes);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("hub unavailable")]
    HubUnavailable,
    #[error("feed for {0} unavailable")]
    FeedUnavailable(ChannelPath),
    #[error("no feed for {0}")]
    NoFeed(ChannelPath),
}

/// Append-only feed of CNs kept by the Source.
#[derive(Debug, Clone)]
pub struct Feed {
    entries: Vec<ChangeNotification>,
    high_water: usize,
    /// Only the last `window` entries are served when set.
    window: Option<usize>,
    envelope_bytes: u64,
    available: bool,
}

/// Result of one hub fetch of a feed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedFetch {
    pub new_entries: Vec<ChangeNotification>,
    /// Bytes of the whole served document.
    pub bytes: u64,
    /// Entries above the old high-water mark that fell outside the window.
    pub missed: usize,
}

impl Feed {
    pub fn new(window: Option<usize>, envelope_bytes: u64) -> Self {
        Feed {
            entries: Vec::new(),
            high_water: 0,
            window,
            envelope_bytes,
            available: true,
        }
    }

    pub fn append(&mut self, cn: ChangeNotification) {
        self.entries.push(cn);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    pub fn entry_bytes(&self, cn: &ChangeNotification) -> u64 {
        cn.frame_len() as u64 + self.envelope_bytes
    }

    /// Serves the feed document and advances the high-water mark.
    pub fn fetch(&mut self, channel: &ChannelPath) -> Result<FeedFetch, BaselineError> {
        if !self.available {
            return Err(BaselineError::FeedUnavailable(channel.clone()));
        }
        let visible_from = match self.window {
            Some(w) => self.entries.len().saturating_sub(w),
            None => 0,
        };
        let bytes = self.entries[visible_from..].iter().map(|cn| self.entry_bytes(cn)).sum();
        let new_from = self.high_water.max(visible_from);
        let fetch = FeedFetch {
            new_entries: self.entries[new_from..].to_vec(),
            bytes,
            missed: visible_from.saturating_sub(self.high_water),
        };
        self.high_water = self.entries.len();
        Ok(fetch)
    }
}

struct Callback {
    name: String,
    sink: Arc<dyn Sink>,
}

/// Feeds per channel, the hub, and its registered callbacks.
pub struct SimulatedPush {
    feeds: BTreeMap<ChannelPath, Feed>,
    callbacks: BTreeMap<ChannelPath, Vec<Callback>>,
    window: Option<usize>,
    envelope_bytes: u64,
    hub_available: bool,
    pending_pings: Vec<ChannelPath>,
    missed_entries: u64,
    fetch_sizes: Vec<u64>,
    ledger: InteractionLedger,
}

impl SimulatedPush {
    pub fn new(window: Option<usize>, envelope_bytes: u64) -> Self {
        SimulatedPush {
            feeds: BTreeMap::new(),
            callbacks: BTreeMap::new(),
            window,
            envelope_bytes,
            hub_available: true,
            pending_pings: Vec::new(),
            missed_entries: 0,
            fetch_sizes: Vec::new(),
            ledger: InteractionLedger::new(),
        }
    }

    pub fn ledger(&self) -> &InteractionLedger {
        &self.ledger
    }

    pub fn feed(&self, channel: &ChannelPath) -> Option<&Feed> {
        self.feeds.get(channel)
    }

    pub fn feed_mut(&mut self, channel: &ChannelPath) -> &mut Feed {
        let (window, envelope) = (self.window, self.envelope_bytes);
        self.feeds
            .entry(channel.clone())
            .or_insert_with(|| Feed::new(window, envelope))
    }

    pub fn set_hub_available(&mut self, available: bool) {
        self.hub_available = available;
    }

    /// Entries a windowed feed dropped before the hub saw them.
    pub fn missed_entries(&self) -> u64 {
        self.missed_entries
    }

    /// Bytes of every successful feed fetch, in order.
    pub fn fetch_sizes(&self) -> &[u64] {
        &self.fetch_sizes
    }

    /// Registers a Destination callback on the feed of `channel`.
    pub fn register_callback(&mut self, channel: &ChannelPath, name: impl Into<String>, sink: Arc<dyn Sink>) {
        self.feed_mut(channel);
        self.callbacks.entry(channel.clone()).or_default().push(Callback {
            name: name.into(),
            sink,
        });
    }

    /// Appends `events` to their channels' feeds and sends one payload-free
    /// ping per feed that grew. Returns the channels whose ping reached the
    /// hub.
    pub fn source_update_and_ping(&mut self, events: &[ChangeNotification]) -> Vec<ChannelPath> {
        let mut grown: Vec<ChannelPath> = Vec::new();
        for cn in events {
            let bytes = {
                let feed = self.feed_mut(&cn.channel);
                let b = feed.entry_bytes(cn);
                feed.append(cn.clone());
                b
            };
            self.ledger
                .record(Arch::SimulatedPush, Interaction::FeedAppend, 1, bytes);
            if !grown.contains(&cn.channel) {
                grown.push(cn.channel.clone());
            }
        }
        let mut delivered = Vec::new();
        for channel in grown {
            self.ledger.record(Arch::SimulatedPush, Interaction::Ping, 1, 0);
            if self.hub_available {
                delivered.push(channel);
            } else {
                self.ledger.record_failure(Arch::SimulatedPush, Interaction::Ping);
            }
        }
        self.pending_pings.extend(delivered.iter().cloned());
        delivered
    }

    /// Hub side of a ping: fetches the channel's feed and returns the
    /// entries above the high-water mark.
    pub fn hub_on_ping(&mut self, channel: &ChannelPath) -> Result<Vec<ChangeNotification>, BaselineError> {
        let feed = self
            .feeds
            .get_mut(channel)
            .ok_or_else(|| BaselineError::NoFeed(channel.clone()))?;
        self.ledger.record(Arch::SimulatedPush, Interaction::FeedFetch, 1, 0);
        match feed.fetch(channel) {
            Ok(fetch) => {
                self.ledger
                    .record(Arch::SimulatedPush, Interaction::FeedFetch, 0, fetch.bytes);
                self.missed_entries += fetch.missed as u64;
                self.fetch_sizes.push(fetch.bytes);
                Ok(fetch.new_entries)
            }
            Err(e) => {
                self.ledger.record_failure(Arch::SimulatedPush, Interaction::FeedFetch);
                Err(e)
            }
        }
    }

    /// Pushes each entry to every callback on `channel`. Returns the number
    /// of successful pushes; failed callbacks are counted and skipped.
    pub fn hub_push_to_callbacks(&mut self, channel: &ChannelPath, entries: &[ChangeNotification]) -> u64 {
        let Some(callbacks) = self.callbacks.get(channel) else {
            return 0;
        };
        let mut pushed = 0;
        for cn in entries {
            let bytes = cn.frame_len() as u64 + self.envelope_bytes;
            for cb in callbacks {
                self.ledger
                    .record(Arch::SimulatedPush, Interaction::CallbackPush, 1, bytes);
                match cb.sink.try_deliver(cn) {
                    Ok(()) => pushed += 1,
                    Err(e) => {
                        log::warn!("callback {} rejected push: {e}", cb.name);
                        self.ledger
                            .record_failure(Arch::SimulatedPush, Interaction::CallbackPush);
                    }
                }
            }
        }
        pushed
    }

    /// Handles every ping that reached the hub since the last call.
    pub fn hub_process_pings(&mut self) -> u64 {
        let mut pushed = 0;
        for channel in std::mem::take(&mut self.pending_pings) {
            if let Ok(entries) = self.hub_on_ping(&channel) {
                pushed += self.hub_push_to_callbacks(&channel, &entries);
            }
        }
        pushed
    }

    /// One update cycle: append, ping, fetch, push.
    pub fn run_cycle(&mut self, events: &[ChangeNotification]) -> u64 {
        self.source_update_and_ping(events);
        self.hub_process_pings()
    }
}

/// Collects CNs instead of publishing them; the Source's side of the feed.
#[derive(Default)]
struct FeedCollector {
    cns: Mutex<Vec<ChangeNotification>>,
}

impl Publisher for FeedCollector {
    fn create_channel(&self, _path: &ChannelPath) -> Result<(), BrokerError> {
        Ok(())
    }

    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError> {
        self.cns.lock().expect("collector lock poisoned").push(cn.clone());
        Ok(0)
    }
}

/// Broker publisher that records publish and delivery interactions.
struct LedgerPublisher<'a> {
    broker: &'a Broker,
    ledger: Mutex<InteractionLedger>,
}

impl Publisher for LedgerPublisher<'_> {
    fn create_channel(&self, path: &ChannelPath) -> Result<(), BrokerError> {
        self.broker.create_channel(path);
        Ok(())
    }

    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError> {
        let fanout = self.broker.publish_cn(cn)?;
        let frame = cn.frame_len() as u64;
        let mut ledger = self.ledger.lock().expect("ledger lock poisoned");
        ledger.record(Arch::RealPush, Interaction::CnPublish, 1, frame);
        ledger.record(
            Arch::RealPush,
            Interaction::CnDeliver,
            fanout as u64,
            fanout as u64 * frame,
        );
        Ok(fanout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonReport {
    /// Cycles with at least one event.
    pub cycles: u64,
    pub events: u64,
    pub destinations: usize,
    pub window: Option<usize>,
    pub ledger: InteractionLedger,
    /// Entries a windowed feed dropped before the hub fetched them.
    pub missed_entries: u64,
    /// Bytes of each feed fetch, in cycle order.
    pub fetch_sizes: Vec<u64>,
    /// Every replica of both architectures has the same listing.
    pub replicas_identical: bool,
    /// Replicas equal the Source's live resources.
    pub replicas_match_source: bool,
}

impl ComparisonReport {
    /// Simulated-push CN-side interactions minus real-push ones.
    pub fn extra_cn_interactions(&self) -> i64 {
        self.ledger.cn_side(Arch::SimulatedPush) as i64 - self.ledger.cn_side(Arch::RealPush) as i64
    }

    pub fn to_csv(&self) -> String {
        self.ledger.to_csv()
    }
}

type Listing = Vec<(NormalizedUri, Digest)>;

fn drain_all(dests: &[Destination]) -> Result<(u64, u64), DestinationError> {
    let (mut pulls, mut bytes) = (0, 0);
    for d in dests {
        while d.process_one()?.is_some() {}
        let c = d.counters();
        pulls += c.fetches;
        bytes += c.fetched_bytes;
    }
    Ok((pulls, bytes))
}

fn new_destinations(n: usize, source: &Source, clock: &VirtualClock, prefix: &str) -> Vec<Destination> {
    (0..n)
        .map(|i| {
            Destination::new(
                format!("{prefix}-{i}"),
                Arc::new(clock.clone()),
                crate::destination::DEFAULT_INTERVAL_MS,
                Box::new(MemoryReplica::new()),
                Arc::new(source.handle()),
            )
            .with_sleeper(Arc::new(NoSleep))
        })
        .collect()
}

type Snapshot = BTreeMap<NormalizedUri, crate::source::LatestState>;

/// Live URIs changed since `before`: the only ones a Destination can hold.
fn live_listing(source: &Source, before: &Snapshot) -> Listing {
    let after = source.store().latest_listing();
    let changed = crate::harness::changed_since(before, &after);
    after
        .into_iter()
        .filter(|(u, _)| changed.contains(u))
        .filter_map(|(u, s)| s.digest.map(|d| (u, d)))
        .collect()
}

/// Runs the same cycles through real push and simulated push with
/// `destinations` subscribers each, channel categories off.
pub fn compare_architectures(
    baseline: &Changeset,
    cycles: &[Changeset],
    destinations: usize,
    window: Option<usize>,
    envelope_bytes: u64,
) -> Result<ComparisonReport, DestinationError> {
    let all: ChannelPath = crate::source::DEFAULT_ALL_CHANNEL.parse().expect("valid channel");
    let strip = |cs: &Changeset| Changeset {
        categories: Vec::new(),
        ..cs.clone()
    };

    // real push
    let clock = VirtualClock::new();
    let mut source = Source::new(all.clone(), Arc::new(clock.clone()));
    source.load_baseline(baseline);
    let snapshot = source.store().latest_listing();
    let broker = Broker::new();
    let real = new_destinations(destinations, &source, &clock, "real");
    for (i, d) in real.iter().enumerate() {
        broker
            .subscribe(&format!("real-{i}"), &all, d.queue().clone())
            .expect("fresh queue is open");
    }
    let publisher = LedgerPublisher {
        broker: &broker,
        ledger: Mutex::new(InteractionLedger::new()),
    };
    let mut nonempty = 0;
    let mut events = 0;
    for cs in cycles {
        let report = source.process_changeset(&strip(cs), &publisher);
        if report.all_channel_cns > 0 {
            nonempty += 1;
            events += report.all_channel_cns;
        }
        drain_all(&real)?;
    }
    let (pulls, bytes) = drain_all(&real)?;
    let mut ledger = publisher.ledger.into_inner().expect("ledger lock poisoned");
    ledger.record(Arch::RealPush, Interaction::ResourcePull, pulls, bytes);
    let source_listing = live_listing(&source, &snapshot);
    let mut listings: Vec<Listing> = real.iter().map(|d| d.replica_digest_listing()).collect();

    // simulated push
    let clock = VirtualClock::new();
    let mut source = Source::new(all.clone(), Arc::new(clock.clone()));
    source.load_baseline(baseline);
    let sim_snapshot = source.store().latest_listing();
    let sim_dests = new_destinations(destinations, &source, &clock, "sim");
    let mut sim = SimulatedPush::new(window, envelope_bytes);
    for (i, d) in sim_dests.iter().enumerate() {
        sim.register_callback(&all, format!("sim-{i}"), d.queue().clone());
    }
    for cs in cycles {
        let collector = FeedCollector::default();
        source.process_changeset(&strip(cs), &collector);
        let cns = collector.cns.into_inner().expect("collector lock poisoned");
        if !cns.is_empty() {
            sim.run_cycle(&cns);
        }
        drain_all(&sim_dests)?;
    }
    let (pulls, bytes) = drain_all(&sim_dests)?;
    let mut sim_ledger = sim.ledger().clone();
    sim_ledger.record(Arch::SimulatedPush, Interaction::ResourcePull, pulls, bytes);
    ledger.merge(&sim_ledger);
    listings.extend(sim_dests.iter().map(|d| d.replica_digest_listing()));

    let replicas_identical = listings.windows(2).all(|w| w[0] == w[1]);
    let replicas_match_source =
        listings.iter().all(|l| *l == source_listing) && live_listing(&source, &sim_snapshot) == source_listing;
    Ok(ComparisonReport {
        cycles: nonempty,
        events,
        destinations,
        window,
        ledger,
        missed_entries: sim.missed_entries(),
        fetch_sizes: sim.fetch_sizes().to_vec(),
        replicas_identical,
        replicas_match_source,
    })
}
