//! Hierarchical channel identifiers.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel path has no segments")]
    Empty,
    #[error("invalid channel segment {0:?}")]
    BadSegment(String),
}

/// A channel in the nesting tree, e.g. `dbpedia/music`.
///
/// Ordering is lexicographic on segments, which places every path directly
/// before its descendants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelPath(Vec<String>);

impl ChannelPath {
    pub fn new<I, S>(segments: I) -> Result<Self, ChannelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() {
            return Err(ChannelError::Empty);
        }
        for s in &segments {
            if s.is_empty() || s.chars().any(|c| c == SEPARATOR || c.is_whitespace() || c.is_control()) {
                return Err(ChannelError::BadSegment(s.clone()));
            }
        }
        Ok(ChannelPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// True iff `self` is a strict prefix of `other`.
    pub fn is_ancestor_of(&self, other: &ChannelPath) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }

    /// The path minus its last segment, or `None` for a root channel.
    pub fn parent(&self) -> Option<ChannelPath> {
        (self.0.len() > 1).then(|| ChannelPath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn child(&self, segment: &str) -> Result<ChannelPath, ChannelError> {
        let mut segments = self.0.clone();
        segments.push(segment.to_owned());
        ChannelPath::new(segments)
    }

    /// Every prefix of this path, shortest first, ending with the path itself.
    pub fn spine(&self) -> impl Iterator<Item = ChannelPath> + '_ {
        (1..=self.0.len()).map(|n| ChannelPath(self.0[..n].to_vec()))
    }
}

pub fn is_ancestor(a: &ChannelPath, b: &ChannelPath) -> bool {
    a.is_ancestor_of(b)
}

impl fmt::Display for ChannelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(s)?;
        }
        Ok(())
    }
}

impl FromStr for ChannelPath {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(ChannelError::Empty);
        }
        ChannelPath::new(s.split(SEPARATOR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> ChannelPath {
        s.parse().unwrap()
    }

    #[test]
    fn ancestor_is_strict_prefix() {
        assert!(is_ancestor(&p("dbpedia"), &p("dbpedia/music")));
        assert!(!is_ancestor(&p("dbpedia"), &p("dbpedia")));
        assert!(!is_ancestor(&p("dbpedia/music"), &p("dbpedia")));
        assert!(!is_ancestor(&p("dbped"), &p("dbpedia/music")));
        assert!(is_ancestor(&p("a"), &p("a/b/c")));
    }

    #[test]
    fn rejects_bad_paths() {
        assert_eq!("".parse::<ChannelPath>(), Err(ChannelError::Empty));
        assert!("a//b".parse::<ChannelPath>().is_err());
        assert!("a/b c".parse::<ChannelPath>().is_err());
        assert!(ChannelPath::new(Vec::<String>::new()).is_err());
        assert!(ChannelPath::new(["a/b"]).is_err());
    }

    #[test]
    fn parent_and_spine() {
        let path = p("a/b/c");
        assert_eq!(path.parent(), Some(p("a/b")));
        assert_eq!(p("a").parent(), None);
        let spine: Vec<String> = path.spine().map(|c| c.to_string()).collect();
        assert_eq!(spine, ["a", "a/b", "a/b/c"]);
    }

    #[test]
    fn display_round_trips() {
        assert_eq!(p("dbpedia/music").to_string(), "dbpedia/music");
    }
}
