//! Timed experiment runs under a virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ConfigError, WorkloadConfig};
use super::diff::{
    changed_since, payload_accounting, recursive_diff, DiffReport, PayloadReport, DEFAULT_COMPRESSION_COEFFICIENT,
};
use super::workload::{generate_workload, Workload};
use crate::baseline::{Arch, Interaction, InteractionLedger};
use crate::broker::{Broker, Sink, SinkError};
use crate::channel::ChannelPath;
use crate::clock::{Clock, VirtualClock};
use crate::destination::{
    CnQueue, Destination, DestinationCounters, FileReplica, LatencyModel, MemoryReplica, NoSleep, Outcome, QueueStats,
    ReplicaStore,
};
use crate::notification::ChangeNotification;
use crate::source::{KindCounts, Source};
use crate::uri::NormalizedUri;

pub const DEFAULT_DELETE_COST_MS: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoreKind {
    Memory,
    /// File-per-resource replica rooted at the path.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DestinationSpec {
    pub name: String,
    pub latency: LatencyModel,
    pub store: StoreKind,
    pub workers: usize,
    /// Subscribed channel; `None` means the all-changes channel.
    pub channel: Option<ChannelPath>,
}

impl DestinationSpec {
    pub fn new(name: impl Into<String>, latency: LatencyModel) -> Self {
        DestinationSpec {
            name: name.into(),
            latency,
            store: StoreKind::Memory,
            workers: 1,
            channel: None,
        }
    }

    /// A distant Destination: 40 ms pulls.
    pub fn far() -> Self {
        Self::new("far", LatencyModel::FAR)
    }

    /// A nearby Destination: 5 ms pulls.
    pub fn near() -> Self {
        Self::new("near", LatencyModel::NEAR)
    }
}

/// CNs for these URIs never reach any Destination.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub drop_uris: BTreeSet<NormalizedUri>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub workload: WorkloadConfig,
    pub destinations: Vec<DestinationSpec>,
    pub delete_cost_ms: u64,
    pub compression_coefficient: f64,
    pub faults: FaultPlan,
}

impl ExperimentConfig {
    pub fn new(run_id: impl Into<String>, workload: WorkloadConfig) -> Self {
        ExperimentConfig {
            run_id: run_id.into(),
            workload,
            destinations: vec![DestinationSpec::far(), DestinationSpec::near()],
            delete_cost_ms: DEFAULT_DELETE_COST_MS,
            compression_coefficient: DEFAULT_COMPRESSION_COEFFICIENT,
            faults: FaultPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DestinationReport {
    pub name: String,
    pub max_queue: usize,
    pub queue: QueueStats,
    pub drained_all: bool,
    pub diff: DiffReport,
    pub diff_pct: f64,
    pub counters: DestinationCounters,
    pub dropped_by_fault: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    /// CNs on the all-changes channel, one per event.
    pub total_cns: u64,
    /// All CNs published, category channels included.
    pub cns_published: u64,
    pub events: KindCounts,
    pub intervals: u64,
    pub interval_ms: u64,
    pub destinations: Vec<DestinationReport>,
    pub max_queue: usize,
    pub diff_count: usize,
    pub diff_pct: f64,
    /// Changeset lines the Source rejected as malformed; reported apart
    /// from accuracy.
    pub excluded: u64,
    /// Payload of the first Destination.
    pub payload: PayloadReport,
    pub ledger: InteractionLedger,
    /// Virtual time at which the last CN was processed.
    pub quiescent_at_ms: u64,
    pub complete: bool,
    pub error: Option<String>,
}

impl RunReport {
    pub fn all_drained(&self) -> bool {
        self.destinations.iter().all(|d| d.drained_all)
    }

    pub fn csv_header() -> &'static str {
        "run_id,seed,total_cns,destination,max_queue,intervals,drained_intervals,diff_count,diff_pct,excluded,lost,changeset_bytes,get_bytes,get_compressed_estimate,complete"
    }

    /// One row per Destination, with header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::csv_header());
        self.write_csv_rows(&mut out);
        out
    }

    pub fn write_csv_rows(&self, out: &mut String) {
        for d in &self.destinations {
            let drained = d.queue.drained_at_interval_end.iter().filter(|x| **x).count();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.4},{},{},{},{},{},{}",
                self.run_id,
                self.seed,
                self.total_cns,
                d.name,
                d.max_queue,
                self.intervals,
                drained,
                d.diff.count,
                d.diff_pct,
                self.excluded,
                d.counters.lost,
                self.payload.changeset_bytes,
                d.counters.fetched_bytes,
                self.payload.get_compressed_estimate,
                self.complete
            );
        }
    }
}

/// Table with one row per run: total CNs, then diff and MaxQ per
/// Destination.
pub fn render_table(reports: &[RunReport]) -> String {
    let names: Vec<&str> = reports
        .first()
        .map(|r| r.destinations.iter().map(|d| d.name.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["Run".to_owned(), "Total CNs".to_owned()];
    for n in &names {
        header.push(format!("Diff {n}"));
    }
    for n in &names {
        header.push(format!("MaxQ {n}"));
    }
    header.push("Drained".to_owned());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.run_id.clone(), r.total_cns.to_string()];
        for d in &r.destinations {
            row.push(format!("{} ({:.3}%)", d.diff.count, d.diff_pct));
        }
        for d in &r.destinations {
            row.push(d.max_queue.to_string());
        }
        let drained: usize = r
            .destinations
            .iter()
            .map(|d| d.queue.drained_at_interval_end.iter().filter(|x| **x).count())
            .min()
            .unwrap_or(0);
        row.push(format!("{drained}/{}", r.intervals));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r.get(c).map_or(0, String::len)).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  "));
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(cells.join("  ").len()));
        }
    }
    out
}

/// Drops CNs for planted URIs before they reach the wrapped queue.
struct FaultySink {
    inner: Arc<CnQueue>,
    drop_uris: BTreeSet<NormalizedUri>,
    dropped: Arc<AtomicU64>,
}

impl Sink for FaultySink {
    fn try_deliver(&self, cn: &ChangeNotification) -> Result<(), SinkError> {
        if self.drop_uris.contains(&cn.uri) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        self.inner.try_deliver(cn)
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn close(&self) {
        self.inner.close()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Poll(u64),
    Worker { dest: usize, worker: usize },
}

/// Generates the workload from `cfg.workload` and runs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, ConfigError> {
    let workload = generate_workload(&cfg.workload)?;
    Ok(run_workload(cfg, &workload))
}

/// Replays `workload` through a Source, an in-process broker and the
/// configured Destinations. Time is simulated: polls happen on the poll
/// interval and each CN occupies a worker for its sampled pull latency.
pub fn run_workload(cfg: &ExperimentConfig, workload: &Workload) -> RunReport {
    let wcfg = &workload.config;
    let clock = VirtualClock::new();
    let shared_clock: Arc<dyn Clock> = Arc::new(clock.clone());
    let mut source = Source::new(wcfg.all_channel.clone(), Arc::clone(&shared_clock));
    source.load_baseline(&workload.baseline);
    let before = source.store().latest_listing();
    let broker = Broker::new();
    broker.create_channel(&wcfg.all_channel);

    let mut error = None;
    let mut dests = Vec::new();
    let mut dropped = Vec::new();
    for spec in &cfg.destinations {
        let replica: Box<dyn ReplicaStore> = match &spec.store {
            StoreKind::Memory => Box::new(MemoryReplica::new()),
            StoreKind::File(root) => match FileReplica::open(root) {
                Ok(r) => Box::new(r),
                Err(e) => {
                    error.get_or_insert(format!("{}: cannot open replica at {}: {e}", spec.name, root.display()));
                    Box::new(MemoryReplica::new())
                }
            },
        };
        let d = Destination::new(
            spec.name.clone(),
            Arc::clone(&shared_clock),
            wcfg.interval_ms,
            replica,
            Arc::new(source.handle()),
        )
        .with_sleeper(Arc::new(NoSleep));
        let counter = Arc::new(AtomicU64::new(0));
        let sink: Arc<dyn Sink> = if cfg.faults.drop_uris.is_empty() {
            d.queue().clone()
        } else {
            Arc::new(FaultySink {
                inner: d.queue().clone(),
                drop_uris: cfg.faults.drop_uris.clone(),
                dropped: Arc::clone(&counter),
            })
        };
        let channel = spec.channel.clone().unwrap_or_else(|| wcfg.all_channel.clone());
        if let Err(e) = broker.subscribe(&spec.name, &channel, sink) {
            error.get_or_insert(format!("{}: subscribe failed: {e}", spec.name));
        }
        dests.push(d);
        dropped.push(counter);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(wcfg.seed ^ 0x5EED_1A7E);
    let mut feed = workload.feed();
    let mut heap: BinaryHeap<Reverse<(u64, Event)>> = BinaryHeap::new();
    let mut idle: Vec<Vec<bool>> = cfg.destinations.iter().map(|s| vec![true; s.workers.max(1)]).collect();
    let mut events = KindCounts::default();
    let (mut total_cns, mut cns_published, mut excluded, mut changeset_bytes) = (0, 0, 0, 0);
    let mut quiescent_at = 0;
    if wcfg.cycles > 0 {
        heap.push(Reverse((0, Event::Poll(0))));
    }
    while let Some(Reverse((t, event))) = heap.pop() {
        clock.advance_to(t);
        match event {
            Event::Poll(k) => {
                let report = source.poll_cycle(&mut feed, &broker);
                events.merge(&report.events_emitted);
                total_cns += report.all_channel_cns;
                cns_published += report.cns_published;
                excluded += report.malformed_lines;
                changeset_bytes += report.changeset_bytes;
                if let Some(e) = report.publish_error.or(report.feed_error) {
                    error.get_or_insert(format!("cycle {k}: {e}"));
                }
                if k + 1 < wcfg.cycles {
                    heap.push(Reverse((t + wcfg.poll_interval_ms, Event::Poll(k + 1))));
                }
                for (d, workers) in idle.iter_mut().enumerate() {
                    for (w, free) in workers.iter_mut().enumerate() {
                        if *free && !dests[d].queue().is_empty() {
                            *free = false;
                            heap.push(Reverse((t, Event::Worker { dest: d, worker: w })));
                        }
                    }
                }
            }
            Event::Worker { dest, worker } => match dests[dest].process_one() {
                Ok(Some(p)) => {
                    let spec = &cfg.destinations[dest];
                    let cost = if p.outcome == Outcome::Deleted && p.fetch_attempts == 0 {
                        cfg.delete_cost_ms
                    } else {
                        (0..p.fetch_attempts)
                            .map(|_| spec.latency.sample(&mut rng))
                            .sum::<u64>()
                            + p.backoff_ms
                    };
                    let done = t + cost.max(1);
                    quiescent_at = quiescent_at.max(done);
                    heap.push(Reverse((done, Event::Worker { dest, worker })));
                }
                Ok(None) => idle[dest][worker] = true,
                Err(e) => {
                    error.get_or_insert(format!("{}: {e}", cfg.destinations[dest].name));
                    idle[dest][worker] = true;
                }
            },
        }
    }

    let intervals = wcfg.intervals();
    let end = wcfg.duration_ms();
    let after = source.store().latest_listing();
    let scope = changed_since(&before, &after);
    let handle = source.handle();
    let mut reports = Vec::new();
    for (i, d) in dests.iter().enumerate() {
        let mut queue = d.queue().stats_until(end);
        queue.max_len_per_interval.truncate(intervals as usize);
        queue.drained_at_interval_end.truncate(intervals as usize);
        let diff = recursive_diff(
            &after,
            Some(&scope),
            &d.replica_digest_listing(),
            |u| handle.get_representation(u).ok().map(|rv| rv.body),
            |u| d.replica_body(u).ok().flatten(),
        );
        reports.push(DestinationReport {
            name: d.name().to_owned(),
            max_queue: queue.max_queue(),
            drained_all: queue.all_drained(),
            diff_pct: diff.pct_of(total_cns),
            diff,
            queue,
            counters: d.counters(),
            dropped_by_fault: dropped[i].load(Ordering::Relaxed),
        });
    }
    let mut ledger = InteractionLedger::new();
    let stats = broker.stats();
    ledger.record(Arch::RealPush, Interaction::CnPublish, stats.published, 0);
    ledger.record(Arch::RealPush, Interaction::CnDeliver, stats.delivered, 0);
    for r in &reports {
        ledger.record(
            Arch::RealPush,
            Interaction::ResourcePull,
            r.counters.fetches,
            r.counters.fetched_bytes,
        );
    }
    let get_bytes = reports.first().map_or(0, |r| r.counters.fetched_bytes);
    let diff_count = reports.iter().map(|r| r.diff.count).max().unwrap_or(0);
    RunReport {
        run_id: cfg.run_id.clone(),
        seed: wcfg.seed,
        total_cns,
        cns_published,
        events,
        intervals,
        interval_ms: wcfg.interval_ms,
        max_queue: reports.iter().map(|r| r.max_queue).max().unwrap_or(0),
        diff_count,
        diff_pct: if total_cns == 0 {
            0.0
        } else {
            diff_count as f64 * 100.0 / total_cns as f64
        },
        destinations: reports,
        excluded,
        payload: payload_accounting(changeset_bytes, get_bytes, cfg.compression_coefficient),
        ledger,
        quiescent_at_ms: quiescent_at,
        complete: error.is_none(),
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Profile;

    fn small(seed: u64, events: u64) -> WorkloadConfig {
        WorkloadConfig {
            seed,
            cycles: 100,
            interval_ms: 300_000,
            total_events: Some(events),
            baseline_resources: 400,
            max_events_per_cycle: 200,
            ..Default::default()
        }
    }

    #[test]
    fn small_run_is_synced_and_drained() {
        let r = run_experiment(&ExperimentConfig::new("t", small(1, 2000))).unwrap();
        assert!(r.complete, "{:?}", r.error);
        assert_eq!(r.total_cns, 2000);
        assert_eq!(r.diff_count, 0, "{:?}", r.destinations[0].diff);
        assert_eq!(r.intervals, 10);
        assert!(r.all_drained());
        assert!(r.max_queue > 0);
        assert_eq!(r.destinations[0].queue.max_len_per_interval.len(), 10);
    }

    #[test]
    fn zero_event_run() {
        let r = run_experiment(&ExperimentConfig::new("zero", small(2, 0))).unwrap();
        assert_eq!((r.total_cns, r.diff_count, r.max_queue), (0, 0, 0));
        assert!(r.all_drained());
    }

    #[test]
    fn deterministic_reports() {
        let cfg = ExperimentConfig::new("d", small(3, 800));
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
    }

    #[test]
    fn slower_destination_queues_at_least_as_much() {
        let r = run_experiment(&ExperimentConfig::new("lat", small(4, 3000))).unwrap();
        let (far, near) = (&r.destinations[0], &r.destinations[1]);
        assert!(far.max_queue >= near.max_queue);
        for ((_, f), (_, n)) in far
            .queue
            .max_len_per_interval
            .iter()
            .zip(&near.queue.max_len_per_interval)
        {
            assert!(f >= n);
        }
    }

    #[test]
    fn spike_then_idle_drains() {
        let wcfg = WorkloadConfig {
            cycles: 11,
            profile: Profile::Scripted(vec![5000]),
            baseline_resources: 6000,
            ..Default::default()
        };
        let r = run_experiment(&ExperimentConfig::new("spike", wcfg)).unwrap();
        assert_eq!(r.total_cns, 5000);
        // every CN arrives at once at t = 0, category CNs included
        assert_eq!(r.destinations[0].max_queue as u64, r.cns_published);
        // oracle: 5000 pulls of 40 ms = 200 s, inside the 330 s run
        let n = r.cns_published;
        assert_eq!(r.destinations[0].counters.processed, n);
        assert!(r.quiescent_at_ms <= n * 40 + n);
        assert!(r.all_drained());
        assert_eq!(r.diff_count, 0);
    }

    #[test]
    fn overload_fails_drain() {
        let wcfg = WorkloadConfig {
            cycles: 20,
            profile: Profile::Scripted(vec![300; 20]),
            baseline_resources: 1000,
            interval_ms: 300_000,
            ..Default::default()
        };
        let mut cfg = ExperimentConfig::new("overload", wcfg);
        // 300 CNs per 30 s cycle against 200 ms pulls: 60 s of work per cycle
        cfg.destinations = vec![DestinationSpec::new("slow", LatencyModel::Constant(200))];
        let r = run_experiment(&cfg).unwrap();
        assert!(!r.all_drained());
        assert_eq!(r.diff_count, 0, "still converges after quiescence");
    }

    #[test]
    fn dropped_cns_show_up_in_diff() {
        let wcfg = small(5, 1500);
        let workload = generate_workload(&wcfg).unwrap();
        let victims: BTreeSet<_> = workload.single_touch_live().into_iter().take(7).collect();
        assert_eq!(victims.len(), 7);
        let mut cfg = ExperimentConfig::new("fault", wcfg);
        cfg.faults.drop_uris = victims.clone();
        let r = run_workload(&cfg, &workload);
        for d in &r.destinations {
            assert_eq!(d.diff.count, 7);
            assert_eq!(d.diff.missing_at_dest.iter().cloned().collect::<BTreeSet<_>>(), victims);
            // categorized victims lose one CN per channel
            assert!(d.dropped_by_fault >= 7);
        }
    }

    #[test]
    fn file_replica_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new("file", small(6, 500));
        cfg.destinations[0].store = StoreKind::File(dir.path().join("far"));
        let r = run_experiment(&cfg).unwrap();
        assert!(r.complete);
        assert_eq!(r.diff_count, 0);
        assert!(std::fs::read_dir(dir.path().join("far")).unwrap().count() > 0);
    }

    #[test]
    fn table_and_csv_render() {
        let r = run_experiment(&ExperimentConfig::new("run-1", small(7, 300))).unwrap();
        let table = render_table(std::slice::from_ref(&r));
        assert!(table.contains("Total CNs") && table.contains("MaxQ far") && table.contains("run-1"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("run_id,seed,total_cns,destination"));
    }
}
