//! Naive fold of changesets into per-URI line sets, independent of the
//! library's store and URI code.

use std::collections::{BTreeMap, BTreeSet};

use pushsync::changeset::Changeset;

use super::codec::oracle_normalize;

pub type LineState = BTreeMap<String, BTreeSet<String>>;

/// Normalized subject and canonical rendering of an N-Triples line.
pub fn oracle_subject(line: &str) -> Option<(String, String)> {
    let line = line.trim();
    let rest = line.strip_prefix('<')?;
    let end = rest.find('>')?;
    let subject = oracle_normalize(&rest[..end]);
    let tail = rest[end + 1..].trim();
    if tail.split_whitespace().count() < 2 {
        return None;
    }
    Some((subject.clone(), format!("<{subject}> {tail}")))
}

/// Removes deleted lines, then adds updated lines; empty sets are dropped.
pub fn fold(state: &mut LineState, cs: &Changeset) {
    for l in &cs.deleted_lines {
        if let Some((s, canon)) = oracle_subject(l) {
            if let Some(set) = state.get_mut(&s) {
                set.remove(&canon);
            }
        }
    }
    for l in &cs.updated_lines {
        if let Some((s, canon)) = oracle_subject(l) {
            state.entry(s).or_default().insert(canon);
        }
    }
    state.retain(|_, set| !set.is_empty());
}

/// Size of the canonical body: one newline per line.
pub fn body_len(lines: &BTreeSet<String>) -> u64 {
    lines.iter().map(|l| l.len() as u64 + 1).sum()
}
