//! Change notifications and their line-oriented wire frame.
//!
//! A frame is one UTF-8 line:
//!
//! ```text
//! CN\t<seq>\t<event_time_ms>\t<kind>\t<channel>\t<uri>\t<digest>\n
//! ```
//!
//! The digest field is empty for deletions.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::ChannelPath;
use crate::digest::Digest;
use crate::uri::{normalize_uri, NormalizedUri};

pub const FRAME_TAG: &str = "CN";
const FIELD_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Create,
    Update,
    Delete,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Create, EventKind::Update, EventKind::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Create => "create",
            EventKind::Update => "update",
            EventKind::Delete => "delete",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "create" => Ok(EventKind::Create),
            "update" => Ok(EventKind::Update),
            "delete" => Ok(EventKind::Delete),
            other => Err(FrameError::BadField {
                field: "kind",
                value: other.to_owned(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame is not terminated by a newline")]
    Truncated,
    #[error("frame is not valid UTF-8")]
    Encoding,
    #[error("frame has {0} fields, expected {FIELD_COUNT}")]
    FieldCount(usize),
    #[error("frame does not start with the {FRAME_TAG} tag")]
    Tag,
    #[error("bad {field} field {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("digest must be empty for deletions and present otherwise")]
    DigestMismatch,
}

/// One change event as pushed from the Source through the broker.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChangeNotification {
    pub seq: u64,
    pub kind: EventKind,
    pub uri: NormalizedUri,
    pub event_time_ms: u64,
    pub channel: ChannelPath,
    /// Digest of the new version; `None` exactly when `kind` is `Delete`.
    pub digest: Option<Digest>,
}

impl ChangeNotification {
    pub fn new(
        seq: u64,
        kind: EventKind,
        uri: NormalizedUri,
        event_time_ms: u64,
        channel: ChannelPath,
        digest: Option<Digest>,
    ) -> Result<Self, FrameError> {
        let cn = ChangeNotification {
            seq,
            kind,
            uri,
            event_time_ms,
            channel,
            digest,
        };
        cn.validate()?;
        Ok(cn)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        match (self.kind, &self.digest) {
            (EventKind::Delete, None) => Ok(()),
            (EventKind::Create | EventKind::Update, Some(_)) => Ok(()),
            _ => Err(FrameError::DigestMismatch),
        }
    }

    /// The frame without its trailing newline.
    pub fn to_line(&self) -> String {
        let digest = self.digest.map(|d| d.to_hex()).unwrap_or_default();
        format!(
            "{FRAME_TAG}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.seq, self.event_time_ms, self.kind, self.channel, self.uri, digest
        )
    }

    /// Parses a frame line with the newline already stripped.
    pub fn from_line(line: &str) -> Result<Self, FrameError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != FIELD_COUNT {
            return Err(FrameError::FieldCount(fields.len()));
        }
        if fields[0] != FRAME_TAG {
            return Err(FrameError::Tag);
        }
        let bad = |field: &'static str, value: &str| FrameError::BadField {
            field,
            value: value.to_owned(),
        };
        let seq = fields[1].parse().map_err(|_| bad("seq", fields[1]))?;
        let event_time_ms = fields[2].parse().map_err(|_| bad("event_time", fields[2]))?;
        let kind = fields[3].parse()?;
        let channel = fields[4].parse().map_err(|_| bad("channel", fields[4]))?;
        let uri = normalize_uri(fields[5]).map_err(|_| bad("uri", fields[5]))?;
        let digest = match fields[6] {
            "" => None,
            hex => Some(hex.parse().map_err(|_| bad("digest", hex))?),
        };
        ChangeNotification::new(seq, kind, uri, event_time_ms, channel, digest)
    }

    /// Wire size of the encoded frame including its newline.
    pub fn frame_len(&self) -> usize {
        self.to_line().len() + 1
    }
}

pub fn encode_cn(cn: &ChangeNotification) -> Vec<u8> {
    debug_assert!(cn.validate().is_ok());
    let mut line = cn.to_line();
    line.push('\n');
    line.into_bytes()
}

/// Decodes exactly one newline-terminated frame.
pub fn decode_cn(frame: &[u8]) -> Result<ChangeNotification, FrameError> {
    let body = frame.strip_suffix(b"\n").ok_or(FrameError::Truncated)?;
    if body.contains(&b'\n') {
        return Err(FrameError::BadField {
            field: "frame",
            value: "embedded newline".to_owned(),
        });
    }
    let line = std::str::from_utf8(body).map_err(|_| FrameError::Encoding)?;
    ChangeNotification::from_line(line)
}
