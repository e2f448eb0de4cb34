//! Long-running network roles.

use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use pushsync::broker::tcp::{BrokerServer, RemoteBroker};
use pushsync::broker::Broker;
use pushsync::changeset::{Changeset, DirFeed};
use pushsync::channel::ChannelPath;
use pushsync::clock::{MonotonicClock, SystemClock};
use pushsync::destination::{Destination, FileReplica};
use pushsync::source::server::{RemoteSource, ResourceServer};
use pushsync::source::Source;

use crate::args::{BrokerArgs, DestArgs, SourceArgs};
use crate::error::{io, CliError, CliResult};

fn channel(s: &str) -> Result<ChannelPath, CliError> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("bad channel {s:?}: {e}")))
}

pub fn broker(a: BrokerArgs) -> CliResult {
    let server = BrokerServer::bind(&a.addr, Broker::new())
        .map_err(io(format!("cannot listen on {}", a.addr)))?
        .with_sink_capacity(a.sink_capacity);
    let local = server.local_addr().map_err(io("cannot read listen address"))?;
    println!("broker listening on {local}");
    server
        .serve(Arc::new(AtomicBool::new(false)))
        .map_err(io(format!("broker on {local} failed")))
}

pub fn source(a: SourceArgs) -> CliResult {
    let all = channel(&a.channel)?;
    let mut source = Source::new(all, Arc::new(SystemClock));
    let baseline_dir = a.data_dir.join("baseline");
    if baseline_dir.is_dir() {
        let cs = Changeset::read_from_dir(&baseline_dir, 0).map_err(|e| CliError::Io(e.to_string()))?;
        let ing = source.load_baseline(&cs);
        log::info!("loaded baseline: {} resources", ing.events.len());
    }
    let server = ResourceServer::bind(&a.addr, source.handle())
        .map_err(io(format!("cannot listen on {}", a.addr)))?
        .spawn()
        .map_err(io("cannot start resource server"))?;
    println!("source serving resources on {}", server.addr);

    let publisher = RemoteBroker::connect_with_retry(&a.broker, |_| {}, Duration::from_millis(a.connect_timeout_ms))
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut feed = DirFeed::new(a.data_dir.join("changesets"));
    let mut polls = 0;
    while a.max_polls.is_none_or(|m| polls < m) {
        let report = source.poll_cycle(&mut feed, &publisher);
        polls += 1;
        if !report.cycle_ids.is_empty() {
            println!(
                "cycles {:?}: {} events, {} CNs published",
                report.cycle_ids,
                report.events_emitted.total(),
                report.cns_published
            );
        }
        if let Some(e) = report.publish_error {
            if !publisher.is_connected() {
                return Err(CliError::Io(format!("lost connection to broker at {}: {e}", a.broker)));
            }
            log::warn!("publish failed: {e}");
        }
        if a.max_polls.is_none_or(|m| polls < m) {
            thread::sleep(Duration::from_millis(a.poll_interval_ms));
        }
    }
    match a.linger_ms {
        Some(ms) => thread::sleep(Duration::from_millis(ms)),
        None => loop {
            thread::sleep(Duration::from_secs(3600));
        },
    }
    server.stop().map_err(io("resource server failed"))
}

pub fn dest(a: DestArgs) -> CliResult {
    let channels = a.channels.iter().map(|c| channel(c)).collect::<Result<Vec<_>, _>>()?;
    let replica =
        FileReplica::open(&a.data_dir).map_err(io(format!("cannot open replica {}", a.data_dir.display())))?;
    let dest = Arc::new(Destination::new(
        a.name.clone(),
        Arc::new(MonotonicClock::new()),
        a.interval_ms,
        Box::new(replica),
        Arc::new(RemoteSource::new(a.source.clone())),
    ));
    let queue = Arc::clone(dest.queue());
    let remote = RemoteBroker::connect_with_retry(
        &a.broker,
        move |cn| {
            if let Err(e) = queue.on_cn(cn) {
                log::error!("{e}");
            }
        },
        Duration::from_millis(a.connect_timeout_ms),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    for c in &channels {
        remote
            .subscribe(c)
            .map_err(|e| CliError::Io(format!("cannot subscribe to {c} at {}: {e}", a.broker)))?;
    }
    println!("{} subscribed to {}", a.name, a.channels.join(", "));

    let stop = Arc::new(AtomicBool::new(false));
    let consumer = {
        let (dest, stop, workers) = (Arc::clone(&dest), Arc::clone(&stop), a.workers);
        thread::spawn(move || dest.run_consumer(workers, &stop))
    };
    let mut outcome = Ok(());
    let mut last = (dest.queue().enqueued(), Instant::now());
    loop {
        thread::sleep(Duration::from_millis(50));
        if !remote.is_connected() {
            outcome = Err(CliError::Io(format!("lost connection to broker at {}", a.broker)));
            break;
        }
        if consumer.is_finished() {
            break;
        }
        let enqueued = dest.queue().enqueued();
        if enqueued != last.0 || !dest.queue().is_empty() {
            last = (enqueued, Instant::now());
        }
        if let Some(idle) = a.idle_exit_ms {
            if enqueued > 0 && last.1.elapsed() >= Duration::from_millis(idle) {
                break;
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    let stats = match consumer.join() {
        Ok(Ok(stats)) => stats,
        Ok(Err(e)) => return Err(CliError::Io(e.to_string())),
        Err(_) => return Err(CliError::Io("consumer thread panicked".into())),
    };
    let c = dest.counters();
    println!(
        "{}: processed {} applied {} deleted {} stale {} lost {} replica {} resources, max queue {}",
        a.name,
        c.processed,
        c.applied,
        c.deleted,
        c.skipped_stale,
        c.lost,
        dest.replica_digest_listing().len(),
        stats.max_queue()
    );
    if let Some(path) = &a.report {
        fs::write(path, stats.to_csv()).map_err(io(format!("cannot write {}", path.display())))?;
    }
    outcome
}
