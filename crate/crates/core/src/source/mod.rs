//! The Source: ingests changesets each poll cycle, keeps every version of
//! every resource, pushes CNs through the broker and serves the latest
//! representation of any URI on request.
//!
//! The Source keeps no memory of CNs after publishing them; its only
//! notification state is the next sequence number.

pub mod server;
pub mod store;

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::broker::{BrokerError, Publisher};
use crate::changeset::{Changeset, ChangesetFeed};
use crate::channel::ChannelPath;
use crate::clock::Clock;
use crate::digest::Digest;
use crate::fetch::{FetchError, ResourceFetcher};
use crate::notification::{ChangeNotification, EventKind};
use crate::resource::ResourceVersion;
use crate::uri::NormalizedUri;

pub use store::{
    CanonicalStore, ChangeEvent, DeltaEntry, Ingested, LatestState, StoreDelta, VersionEntry, VersionState,
};

pub const DEFAULT_ALL_CHANNEL: &str = "dbpedia";
pub const DEFAULT_POLL_INTERVAL_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounts {
    pub create: u64,
    pub update: u64,
    pub delete: u64,
}

impl KindCounts {
    pub fn add(&mut self, kind: EventKind) {
        match kind {
            EventKind::Create => self.create += 1,
            EventKind::Update => self.update += 1,
            EventKind::Delete => self.delete += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.create + self.update + self.delete
    }

    pub fn merge(&mut self, other: &KindCounts) {
        self.create += other.create;
        self.update += other.update;
        self.delete += other.delete;
    }
}

/// Outcome of one poll of the changeset feed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    /// Changesets processed in this poll, ascending.
    pub cycle_ids: Vec<u64>,
    pub events_emitted: KindCounts,
    pub cns_published: u64,
    /// CNs on the all-changes channel; equals the number of events when
    /// publishing succeeded.
    pub all_channel_cns: u64,
    pub changeset_bytes: u64,
    pub malformed_lines: u64,
    pub publish_error: Option<String>,
    pub feed_error: Option<String>,
}

/// Read access to the store for content-transfer pulls.
#[derive(Clone)]
pub struct SourceHandle {
    store: Arc<RwLock<CanonicalStore>>,
}

impl SourceHandle {
    pub fn get_representation(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError> {
        self.store.read().expect("store lock poisoned").get_representation(uri)
    }

    pub fn read(&self) -> RwLockReadGuard<'_, CanonicalStore> {
        self.store.read().expect("store lock poisoned")
    }
}

impl ResourceFetcher for SourceHandle {
    fn fetch(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError> {
        self.get_representation(uri)
    }
}

pub struct Source {
    store: Arc<RwLock<CanonicalStore>>,
    all_channel: ChannelPath,
    next_seq: u64,
    clock: Arc<dyn Clock>,
    known_channels: BTreeSet<ChannelPath>,
}

impl Source {
    pub fn new(all_channel: ChannelPath, clock: Arc<dyn Clock>) -> Self {
        Source {
            store: Arc::new(RwLock::new(CanonicalStore::new())),
            all_channel,
            next_seq: 1,
            clock,
            known_channels: BTreeSet::new(),
        }
    }

    pub fn all_channel(&self) -> &ChannelPath {
        &self.all_channel
    }

    pub fn handle(&self) -> SourceHandle {
        SourceHandle {
            store: Arc::clone(&self.store),
        }
    }

    pub fn store(&self) -> RwLockReadGuard<'_, CanonicalStore> {
        self.store.read().expect("store lock poisoned")
    }

    fn store_mut(&self) -> RwLockWriteGuard<'_, CanonicalStore> {
        self.store.write().expect("store lock poisoned")
    }

    /// Sequence number the next published CN will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Loads an initial dump into the store without publishing anything.
    pub fn load_baseline(&mut self, cs: &Changeset) -> Ingested {
        let ingested = self.ingest_changeset(cs);
        self.assign_categories(&ingested);
        self.apply_events(&ingested.events);
        ingested
    }

    pub fn ingest_changeset(&self, cs: &Changeset) -> Ingested {
        self.store().ingest(cs)
    }

    pub fn assign_categories(&self, ingested: &Ingested) {
        let mut store = self.store_mut();
        for (uri, channel) in &ingested.categories {
            store.assign_category(uri.clone(), channel.clone());
        }
    }

    pub fn apply_events(&self, events: &[ChangeEvent]) -> StoreDelta {
        let now = self.clock.now_ms();
        self.store_mut().apply(events, now)
    }

    fn ensure_channel(&mut self, publisher: &dyn Publisher, path: &ChannelPath) -> Result<(), BrokerError> {
        if !self.known_channels.contains(path) {
            publisher.create_channel(path)?;
            self.known_channels.insert(path.clone());
        }
        Ok(())
    }

    fn publish_one(&mut self, publisher: &dyn Publisher, cn: &ChangeNotification) -> Result<(), BrokerError> {
        self.ensure_channel(publisher, &cn.channel)?;
        match publisher.publish_cn(cn) {
            // the service lost the channel (e.g. it restarted); create it again
            Err(BrokerError::UnknownChannel(path)) => {
                self.known_channels.remove(&path);
                self.ensure_channel(publisher, &path)?;
                publisher.publish_cn(cn).map(|_| ())
            }
            other => other.map(|_| ()),
        }
    }

    /// Publishes one CN per event on the all-changes channel plus one per
    /// category channel of the event's URI. Returns the number published, or
    /// the count so far and the error that aborted publishing.
    pub fn publish_events(
        &mut self,
        events: &[ChangeEvent],
        publisher: &dyn Publisher,
    ) -> Result<u64, (u64, BrokerError)> {
        let now = self.clock.now_ms();
        let mut published = 0;
        for event in events {
            let digest = event.body.as_deref().map(Digest::of);
            let mut channels = vec![self.all_channel.clone()];
            channels.extend(
                self.store()
                    .categories(&event.uri)
                    .filter(|c| **c != self.all_channel)
                    .cloned(),
            );
            for channel in channels {
                let cn = ChangeNotification {
                    seq: self.next_seq,
                    kind: event.kind,
                    uri: event.uri.clone(),
                    event_time_ms: now,
                    channel,
                    digest,
                };
                self.next_seq += 1;
                self.publish_one(publisher, &cn).map_err(|e| (published, e))?;
                published += 1;
            }
        }
        Ok(published)
    }

    /// Ingests, applies and publishes one changeset.
    pub fn process_changeset(&mut self, cs: &Changeset, publisher: &dyn Publisher) -> CycleReport {
        let mut report = CycleReport {
            cycle_ids: vec![cs.cycle_id],
            changeset_bytes: cs.byte_len(),
            ..Default::default()
        };
        let ingested = self.ingest_changeset(cs);
        report.malformed_lines = ingested.malformed_lines;
        self.assign_categories(&ingested);
        self.apply_events(&ingested.events);
        for e in &ingested.events {
            report.events_emitted.add(e.kind);
        }
        match self.publish_events(&ingested.events, publisher) {
            Ok(n) => {
                report.cns_published = n;
                report.all_channel_cns = ingested.events.len() as u64;
            }
            Err((n, e)) => {
                log::error!("cycle {}: publishing aborted: {e}", cs.cycle_id);
                report.cns_published = n;
                report.publish_error = Some(e.to_string());
            }
        }
        report
    }

    /// Takes every changeset newly available from `feed`, in cycle order,
    /// and processes them as one burst.
    pub fn poll_cycle(&mut self, feed: &mut dyn ChangesetFeed, publisher: &dyn Publisher) -> CycleReport {
        let mut changesets = match feed.poll(self.clock.now_ms()) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("feed poll failed, skipping cycle: {e}");
                return CycleReport {
                    feed_error: Some(e.to_string()),
                    ..Default::default()
                };
            }
        };
        changesets.sort_by_key(|c| c.cycle_id);
        let mut report = CycleReport::default();
        for cs in &changesets {
            let r = self.process_changeset(cs, publisher);
            report.cycle_ids.extend(r.cycle_ids);
            report.events_emitted.merge(&r.events_emitted);
            report.cns_published += r.cns_published;
            report.all_channel_cns += r.all_channel_cns;
            report.changeset_bytes += r.changeset_bytes;
            report.malformed_lines += r.malformed_lines;
            if r.publish_error.is_some() {
                report.publish_error = r.publish_error;
                // the store keeps the update; later cycles still publish
            }
        }
        report
    }
}
