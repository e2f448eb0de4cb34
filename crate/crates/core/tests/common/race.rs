//! Exhaustive stale-fetch race check: every short event sequence on two
//! URIs against every interleaving of source cycles and destination steps.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use pushsync::broker::{BrokerError, Publisher, Sink};
use pushsync::changeset::Changeset;
use pushsync::channel::ChannelPath;
use pushsync::clock::VirtualClock;
use pushsync::destination::{CnQueue, Destination, MemoryReplica, NoSleep};
use pushsync::notification::ChangeNotification;
use pushsync::source::Source;
use pushsync::uri::normalize_uri;

const URIS: [&str; 2] = ["http://ex.org/a", "http://ex.org/b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Create,
    Update,
    Delete,
}

/// One event: operation on `URIS[uri]`.
pub type Event = (usize, Op);

/// Valid sequences of exactly `len` events: create only when absent,
/// update and delete only when live.
pub fn sequences(len: usize) -> Vec<Vec<Event>> {
    fn go(live: [bool; 2], prefix: &mut Vec<Event>, len: usize, out: &mut Vec<Vec<Event>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for u in 0..2 {
            let ops: &[Op] = if live[u] {
                &[Op::Update, Op::Delete]
            } else {
                &[Op::Create]
            };
            for &op in ops {
                let mut next = live;
                next[u] = op != Op::Delete;
                prefix.push((u, op));
                go(next, prefix, len, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go([false, false], &mut Vec::new(), len, &mut out);
    out
}

/// Interleavings of `n` source steps (`true`) with `n` destination steps
/// where a destination step never outnumbers the source steps before it.
pub fn ballots(n: usize) -> Vec<Vec<bool>> {
    fn go(s: usize, p: usize, n: usize, prefix: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
        if s == n && p == n {
            out.push(prefix.clone());
            return;
        }
        if s < n {
            prefix.push(true);
            go(s + 1, p, n, prefix, out);
            prefix.pop();
        }
        if p < s {
            prefix.push(false);
            go(s, p + 1, n, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, n, &mut Vec::new(), &mut out);
    out
}

fn line(uri: usize, version: usize) -> String {
    format!("<{}> <http://ex.org/p> \"v{version}\" .", URIS[uri])
}

/// One changeset per event, plus the oracle's final live lines per URI.
fn changesets(events: &[Event]) -> (Vec<Changeset>, BTreeMap<String, BTreeSet<String>>) {
    let mut current: [Option<String>; 2] = [None, None];
    let mut out = Vec::new();
    for (i, &(u, op)) in events.iter().enumerate() {
        let mut cs = Changeset::new(i as u64 + 1);
        if let Some(old) = current[u].take() {
            cs.deleted_lines.push(old);
        }
        if op != Op::Delete {
            let new = line(u, i + 1);
            cs.updated_lines.push(new.clone());
            current[u] = Some(new);
        }
        out.push(cs);
    }
    let mut live = BTreeMap::new();
    for (u, l) in current.iter().enumerate() {
        if let Some(l) = l {
            let uri = normalize_uri(URIS[u]).expect("valid").to_string();
            live.insert(uri, BTreeSet::from([l.clone()]));
        }
    }
    (out, live)
}

struct Direct(Arc<CnQueue>);

impl Publisher for Direct {
    fn create_channel(&self, _path: &ChannelPath) -> Result<(), BrokerError> {
        Ok(())
    }

    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError> {
        self.0
            .try_deliver(cn)
            .map_err(|e| BrokerError::Unavailable(e.to_string()))?;
        Ok(1)
    }
}

/// Runs one sequence under one interleaving; `Err` describes a divergence.
pub fn run_one(events: &[Event], ballot: &[bool]) -> Result<(), String> {
    let (cycles, oracle) = changesets(events);
    let clock = VirtualClock::new();
    let all: ChannelPath = "dbpedia".parse().expect("valid");
    let mut source = Source::new(all, Arc::new(clock.clone()));
    let dest = Destination::new(
        "d",
        Arc::new(clock.clone()),
        1_000,
        Box::new(MemoryReplica::default()),
        Arc::new(source.handle()),
    )
    .with_sleeper(Arc::new(NoSleep));
    let publisher = Direct(Arc::clone(dest.queue()));
    let mut next = cycles.iter();
    let mut tick = 0;
    for &step in ballot {
        tick += 1;
        clock.advance_to(tick);
        if step {
            let cs = next.next().ok_or("ballot has too many source steps")?;
            let report = source.process_changeset(cs, &publisher);
            if let Some(e) = report.publish_error {
                return Err(format!("publish failed: {e}"));
            }
        } else {
            dest.process_one().map_err(|e| e.to_string())?;
        }
    }
    while dest.process_one().map_err(|e| e.to_string())?.is_some() {}

    let mut replica = BTreeMap::new();
    for (uri, _) in dest.replica_digest_listing() {
        let body = dest
            .replica_body(&uri)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("{uri} listed without a body"))?;
        let lines: BTreeSet<String> = String::from_utf8_lossy(&body).lines().map(str::to_owned).collect();
        replica.insert(uri.to_string(), lines);
    }
    if replica != oracle {
        return Err(format!(
            "events {events:?} ballot {ballot:?}: replica {replica:?} != expected {oracle:?}"
        ));
    }
    let listing = source.store().latest_listing();
    for (uri, state) in listing {
        if state.digest != dest.replica_digest(&uri) {
            return Err(format!(
                "events {events:?} ballot {ballot:?}: digest of {uri} differs from the source"
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RaceStats {
    pub sequences: u64,
    pub runs: u64,
}

/// All valid sequences of 1..=`max_events` events under all interleavings.
pub fn race_exhaustive(max_events: usize) -> Result<RaceStats, String> {
    let mut stats = RaceStats::default();
    for len in 1..=max_events {
        let orders = ballots(len);
        for events in sequences(len) {
            stats.sequences += 1;
            for ballot in &orders {
                run_one(&events, ballot)?;
                stats.runs += 1;
            }
        }
    }
    Ok(stats)
}
