//! Source-versus-replica comparison and payload accounting.

use std::collections::{BTreeMap, BTreeSet};

use crate::digest::Digest;
use crate::source::store::LatestState;
use crate::uri::NormalizedUri;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiffReport {
    /// Live at the Source, absent at the Destination.
    pub missing_at_dest: Vec<NormalizedUri>,
    /// Present at the Destination, not live at the Source.
    pub extra_at_dest: Vec<NormalizedUri>,
    pub body_mismatch: Vec<NormalizedUri>,
    pub count: usize,
}

impl DiffReport {
    pub fn is_clean(&self) -> bool {
        self.count == 0
    }

    /// `count / total` as a percentage; 0 when `total` is 0.
    pub fn pct_of(&self, total: u64) -> f64 {
        if total == 0 {
            0.0
        } else {
            self.count as f64 * 100.0 / total as f64
        }
    }
}

/// Compares the Source's latest states against a replica listing.
///
/// `scope` restricts the comparison to the given URIs (those a run
/// changed); `None` compares everything. Digests are compared first;
/// bodies are fetched through the two lookups only on a digest mismatch.
pub fn recursive_diff<S, R>(
    source: &BTreeMap<NormalizedUri, LatestState>,
    scope: Option<&BTreeSet<NormalizedUri>>,
    replica: &[(NormalizedUri, Digest)],
    source_body: S,
    replica_body: R,
) -> DiffReport
where
    S: Fn(&NormalizedUri) -> Option<Vec<u8>>,
    R: Fn(&NormalizedUri) -> Option<Vec<u8>>,
{
    let in_scope = |u: &NormalizedUri| scope.is_none_or(|s| s.contains(u));
    let replica: BTreeMap<&NormalizedUri, &Digest> = replica.iter().map(|(u, d)| (u, d)).collect();
    let mut report = DiffReport::default();
    for (uri, state) in source.iter().filter(|(u, _)| in_scope(u)) {
        match (state.digest, replica.get(uri)) {
            (Some(_), None) => report.missing_at_dest.push(uri.clone()),
            (Some(d), Some(r)) if d != **r && source_body(uri) != replica_body(uri) => {
                report.body_mismatch.push(uri.clone());
            }
            _ => {}
        }
    }
    for uri in replica.keys().filter(|u| in_scope(u)) {
        let live = source.get(*uri).is_some_and(|s| s.digest.is_some());
        if !live {
            report.extra_at_dest.push((*uri).clone());
        }
    }
    report.count = report.missing_at_dest.len() + report.extra_at_dest.len() + report.body_mismatch.len();
    report
}

/// URIs whose latest version differs between two snapshots.
pub fn changed_since(
    before: &BTreeMap<NormalizedUri, LatestState>,
    after: &BTreeMap<NormalizedUri, LatestState>,
) -> BTreeSet<NormalizedUri> {
    after
        .iter()
        .filter(|(u, s)| before.get(*u).is_none_or(|b| b.version != s.version))
        .map(|(u, _)| u.clone())
        .collect()
}

pub const DEFAULT_COMPRESSION_COEFFICIENT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadReport {
    pub changeset_bytes: u64,
    pub get_bytes: u64,
    pub coefficient: f64,
    pub get_compressed_estimate: u64,
}

impl PayloadReport {
    /// Changeset bytes over GET bytes.
    pub fn ratio(&self) -> f64 {
        if self.get_bytes == 0 {
            f64::INFINITY
        } else {
            self.changeset_bytes as f64 / self.get_bytes as f64
        }
    }

    /// Compressed GET estimate over changeset bytes.
    pub fn compressed_ratio(&self) -> f64 {
        if self.changeset_bytes == 0 {
            f64::INFINITY
        } else {
            self.get_compressed_estimate as f64 / self.changeset_bytes as f64
        }
    }
}

pub fn payload_accounting(changeset_bytes: u64, get_bytes: u64, coefficient: f64) -> PayloadReport {
    PayloadReport {
        changeset_bytes,
        get_bytes,
        coefficient,
        get_compressed_estimate: (get_bytes as f64 * coefficient).round() as u64,
    }
}
