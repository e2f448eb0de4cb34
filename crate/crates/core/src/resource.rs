//! Triple lines and the canonical serialization of a topic-URI graph.
//!
//! A resource body is the sorted set of its triple lines joined by `\n` with a
//! trailing newline. Each line is re-rendered with the normalized subject so
//! that differently spelled inputs serialize to identical bytes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::digest::Digest;
use crate::uri::{normalize_uri, NormalizedUri, UriError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripleError {
    #[error("line has no predicate/object after the subject: {0:?}")]
    MissingTerms(String),
    #[error("unterminated <subject> in line {0:?}")]
    Unterminated(String),
    #[error(transparent)]
    Uri(#[from] UriError),
}

/// A parsed `<subject> <predicate> <object>` line.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripleLine {
    pub subject: NormalizedUri,
    /// Everything after the subject, trimmed.
    pub rest: String,
}

impl TripleLine {
    pub fn parse(line: &str) -> Result<Self, TripleError> {
        let line = line.trim();
        let (subject, rest) = if let Some(stripped) = line.strip_prefix('<') {
            let end = stripped
                .find('>')
                .ok_or_else(|| TripleError::Unterminated(line.to_owned()))?;
            (&stripped[..end], &stripped[end + 1..])
        } else {
            match line.find(char::is_whitespace) {
                Some(end) => (&line[..end], &line[end..]),
                None => (line, ""),
            }
        };
        let rest = rest.trim();
        // predicate and object
        if rest.split_whitespace().take(2).count() < 2 {
            return Err(TripleError::MissingTerms(line.to_owned()));
        }
        Ok(TripleLine {
            subject: normalize_uri(subject)?,
            rest: rest.to_owned(),
        })
    }

    /// The canonical rendering used inside resource bodies.
    pub fn render(&self) -> String {
        format!("<{}> {}", self.subject, self.rest)
    }
}

/// Serializes a set of canonical lines; `None` when the set is empty.
pub fn canonical_body<'a, I>(lines: I) -> Option<Vec<u8>>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut out = Vec::new();
    for line in lines {
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    (!out.is_empty()).then_some(out)
}

/// Splits a canonical body back into its line set.
pub fn body_lines(body: &[u8]) -> BTreeSet<String> {
    String::from_utf8_lossy(body)
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// A stored, immutable serialization of one resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceVersion {
    pub uri: NormalizedUri,
    pub version: u64,
    pub body: Vec<u8>,
    pub digest: Digest,
    pub created_at: u64,
}

impl ResourceVersion {
    pub fn new(uri: NormalizedUri, version: u64, body: Vec<u8>, created_at: u64) -> Self {
        let digest = Digest::of(&body);
        ResourceVersion {
            uri,
            version,
            body,
            digest,
            created_at,
        }
    }
}
