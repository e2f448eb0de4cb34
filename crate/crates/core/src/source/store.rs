//! The Source's versioned store of canonical resource serializations.

use std::collections::{BTreeMap, BTreeSet};

use crate::changeset::Changeset;
use crate::channel::ChannelPath;
use crate::digest::Digest;
use crate::fetch::FetchError;
use crate::notification::EventKind;
use crate::resource::{body_lines, canonical_body, ResourceVersion, TripleLine};
use crate::uri::{normalize_uri, NormalizedUri};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VersionState {
    Live { body: Vec<u8>, digest: Digest },
    Tombstone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionEntry {
    pub version: u64,
    pub state: VersionState,
    pub created_at: u64,
}

impl VersionEntry {
    pub fn digest(&self) -> Option<Digest> {
        match &self.state {
            VersionState::Live { digest, .. } => Some(*digest),
            VersionState::Tombstone => None,
        }
    }
}

/// A classified change to one resource, produced from a changeset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeEvent {
    pub kind: EventKind,
    pub uri: NormalizedUri,
    /// New canonical body; `None` for deletions.
    pub body: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    /// One event per affected subject, ordered by URI.
    pub events: Vec<ChangeEvent>,
    pub categories: Vec<(NormalizedUri, ChannelPath)>,
    /// Lines skipped because they did not parse or their subject URI was
    /// malformed.
    pub malformed_lines: u64,
    /// Subjects whose net change was empty (e.g. deleting triples of a
    /// resource that does not exist).
    pub no_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaEntry {
    pub uri: NormalizedUri,
    pub kind: EventKind,
    pub old_version: Option<u64>,
    pub new_version: u64,
    pub digest: Option<Digest>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreDelta {
    pub entries: Vec<DeltaEntry>,
}

/// Latest state of one URI, as used by listings and diffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatestState {
    pub version: u64,
    /// `None` when tombstoned.
    pub digest: Option<Digest>,
}

/// All versions of all resources, plus per-URI category channels.
///
/// Histories are append-only with contiguous version numbers starting at 1.
/// A deletion appends a tombstone; a later create appends a live version
/// after it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CanonicalStore {
    resources: BTreeMap<NormalizedUri, Vec<VersionEntry>>,
    categories: BTreeMap<NormalizedUri, BTreeSet<ChannelPath>>,
}

impl CanonicalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latest(&self, uri: &NormalizedUri) -> Option<&VersionEntry> {
        self.resources.get(uri).and_then(|h| h.last())
    }

    pub fn history(&self, uri: &NormalizedUri) -> &[VersionEntry] {
        self.resources.get(uri).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_live(&self, uri: &NormalizedUri) -> bool {
        matches!(
            self.latest(uri),
            Some(VersionEntry {
                state: VersionState::Live { .. },
                ..
            })
        )
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.resources.keys().filter(|u| self.is_live(u)).count()
    }

    pub fn categories(&self, uri: &NormalizedUri) -> impl Iterator<Item = &ChannelPath> {
        self.categories.get(uri).into_iter().flatten()
    }

    pub fn assign_category(&mut self, uri: NormalizedUri, channel: ChannelPath) {
        self.categories.entry(uri).or_default().insert(channel);
    }

    fn current_lines(&self, uri: &NormalizedUri) -> BTreeSet<String> {
        match self.latest(uri).map(|e| &e.state) {
            Some(VersionState::Live { body, .. }) => body_lines(body),
            _ => BTreeSet::new(),
        }
    }

    /// The latest live version of `uri`.
    pub fn get_representation(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError> {
        let entry = self.latest(uri).ok_or_else(|| FetchError::NotFound(uri.clone()))?;
        match &entry.state {
            VersionState::Live { body, digest } => Ok(ResourceVersion {
                uri: uri.clone(),
                version: entry.version,
                body: body.clone(),
                digest: *digest,
                created_at: entry.created_at,
            }),
            VersionState::Tombstone => Err(FetchError::Gone(uri.clone())),
        }
    }

    /// Classifies a changeset against the current store without modifying it.
    ///
    /// Lines are grouped by normalized subject. Per subject, removals apply
    /// before additions and the net triple set decides the event: a subject
    /// with additions is a create (not live before) or an update; a subject
    /// with only removals is a delete when nothing remains, otherwise an
    /// update. Net no-ops produce no event.
    pub fn ingest(&self, cs: &Changeset) -> Ingested {
        let mut out = Ingested::default();
        let mut groups: BTreeMap<NormalizedUri, (Vec<String>, Vec<String>)> = BTreeMap::new();
        for (lines, additions) in [(&cs.deleted_lines, false), (&cs.updated_lines, true)] {
            for line in lines {
                match TripleLine::parse(line) {
                    Ok(t) => {
                        let group = groups.entry(t.subject.clone()).or_default();
                        if additions {
                            group.1.push(t.render());
                        } else {
                            group.0.push(t.render());
                        }
                    }
                    Err(e) => {
                        log::debug!("cycle {}: skipping line: {e}", cs.cycle_id);
                        out.malformed_lines += 1;
                    }
                }
            }
        }
        for (raw, channel) in &cs.categories {
            match normalize_uri(raw) {
                Ok(uri) => out.categories.push((uri, channel.clone())),
                Err(_) => out.malformed_lines += 1,
            }
        }

        for (uri, (removals, additions)) in groups {
            let was_live = self.is_live(&uri);
            let before = self.current_lines(&uri);
            let mut after = before.clone();
            for r in &removals {
                after.remove(r);
            }
            after.extend(additions.iter().cloned());

            if after == before {
                out.no_ops += 1;
                continue;
            }
            let event = match canonical_body(&after) {
                Some(body) => ChangeEvent {
                    kind: if was_live { EventKind::Update } else { EventKind::Create },
                    uri,
                    body: Some(body),
                },
                None => ChangeEvent {
                    kind: EventKind::Delete,
                    uri,
                    body: None,
                },
            };
            out.events.push(event);
        }
        out
    }

    /// Appends one version per event.
    pub fn apply(&mut self, events: &[ChangeEvent], now_ms: u64) -> StoreDelta {
        let mut delta = StoreDelta::default();
        for event in events {
            let history = self.resources.entry(event.uri.clone()).or_default();
            let old_version = history.last().map(|e| e.version);
            let new_version = old_version.unwrap_or(0) + 1;
            let state = match &event.body {
                Some(body) => VersionState::Live {
                    digest: Digest::of(body),
                    body: body.clone(),
                },
                None => VersionState::Tombstone,
            };
            let entry = VersionEntry {
                version: new_version,
                state,
                created_at: now_ms,
            };
            delta.entries.push(DeltaEntry {
                uri: event.uri.clone(),
                kind: event.kind,
                old_version,
                new_version,
                digest: entry.digest(),
            });
            history.push(entry);
        }
        delta
    }

    /// Latest state of every URI ever stored, ordered by URI.
    pub fn latest_listing(&self) -> BTreeMap<NormalizedUri, LatestState> {
        self.resources
            .iter()
            .filter_map(|(uri, h)| {
                h.last().map(|e| {
                    (
                        uri.clone(),
                        LatestState {
                            version: e.version,
                            digest: e.digest(),
                        },
                    )
                })
            })
            .collect()
    }

    /// A digest over the full contents, for determinism checks.
    pub fn fingerprint(&self) -> Digest {
        let mut buf = Vec::new();
        for (uri, history) in &self.resources {
            buf.extend_from_slice(uri.as_str().as_bytes());
            buf.push(0);
            for e in history {
                buf.extend_from_slice(&e.version.to_le_bytes());
                buf.extend_from_slice(&e.created_at.to_le_bytes());
                match &e.state {
                    VersionState::Live { body, .. } => {
                        buf.push(1);
                        buf.extend_from_slice(&(body.len() as u64).to_le_bytes());
                        buf.extend_from_slice(body);
                    }
                    VersionState::Tombstone => buf.push(0),
                }
            }
        }
        for (uri, cats) in &self.categories {
            buf.extend_from_slice(uri.as_str().as_bytes());
            for c in cats {
                buf.push(0);
                buf.extend_from_slice(c.to_string().as_bytes());
            }
            buf.push(1);
        }
        Digest::of(&buf)
    }
}
