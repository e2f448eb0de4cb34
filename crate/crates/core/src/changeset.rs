//! Per-cycle changesets and the feeds that make them available.
//!
//! On disk a cycle is up to three UTF-8 files in one directory:
//! `<cycle>.updated.txt`, `<cycle>.deleted.txt` and the optional
//! `<cycle>.categories.txt` (`uri<TAB>channel-path` rows).

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::channel::ChannelPath;

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("feed I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad categories row {line:?} in cycle {cycle}")]
    BadCategory { cycle: u64, line: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Changeset {
    pub cycle_id: u64,
    pub updated_lines: Vec<String>,
    pub deleted_lines: Vec<String>,
    /// Raw `(uri, channel)` assignments; URIs are normalized on ingest.
    pub categories: Vec<(String, ChannelPath)>,
}

impl Changeset {
    pub fn new(cycle_id: u64) -> Self {
        Changeset {
            cycle_id,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.updated_lines.is_empty() && self.deleted_lines.is_empty()
    }

    /// Size of the updated and deleted files, one newline per row.
    pub fn byte_len(&self) -> u64 {
        self.updated_lines
            .iter()
            .chain(&self.deleted_lines)
            .map(|l| l.len() as u64 + 1)
            .sum()
    }

    pub fn updated_file(dir: &Path, cycle: u64) -> PathBuf {
        dir.join(format!("{cycle}.updated.txt"))
    }

    pub fn deleted_file(dir: &Path, cycle: u64) -> PathBuf {
        dir.join(format!("{cycle}.deleted.txt"))
    }

    pub fn categories_file(dir: &Path, cycle: u64) -> PathBuf {
        dir.join(format!("{cycle}.categories.txt"))
    }

    /// Writes the cycle's files. The updated and deleted files are always
    /// written, even if empty; categories only when present.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), FeedError> {
        let io_err = |path: &Path| {
            let path = path.to_owned();
            move |source| FeedError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let join = |lines: &[String]| {
            let mut s = String::new();
            for l in lines {
                s.push_str(l);
                s.push('\n');
            }
            s
        };
        let cats_path = Self::categories_file(dir, self.cycle_id);
        if !self.categories.is_empty() {
            let rows: Vec<String> = self.categories.iter().map(|(u, c)| format!("{u}\t{c}")).collect();
            fs::write(&cats_path, join(&rows)).map_err(io_err(&cats_path))?;
        }
        // deleted before updated: readers key availability off the updated file
        let del = Self::deleted_file(dir, self.cycle_id);
        fs::write(&del, join(&self.deleted_lines)).map_err(io_err(&del))?;
        let upd = Self::updated_file(dir, self.cycle_id);
        fs::write(&upd, join(&self.updated_lines)).map_err(io_err(&upd))?;
        Ok(())
    }

    /// Reads cycle `cycle` from `dir`. Missing files read as empty.
    pub fn read_from_dir(dir: &Path, cycle: u64) -> Result<Self, FeedError> {
        let read_lines = |path: PathBuf| -> Result<Vec<String>, FeedError> {
            match fs::read_to_string(&path) {
                Ok(s) => Ok(s.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect()),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
                Err(source) => Err(FeedError::Io { path, source }),
            }
        };
        let mut cs = Changeset::new(cycle);
        cs.updated_lines = read_lines(Self::updated_file(dir, cycle))?;
        cs.deleted_lines = read_lines(Self::deleted_file(dir, cycle))?;
        for row in read_lines(Self::categories_file(dir, cycle))? {
            let bad = || FeedError::BadCategory {
                cycle,
                line: row.clone(),
            };
            let (uri, chan) = row.split_once('\t').ok_or_else(bad)?;
            let chan = chan.trim().parse().map_err(|_| bad())?;
            cs.categories.push((uri.trim().to_owned(), chan));
        }
        Ok(cs)
    }
}

/// Cycle ids for which `dir` holds an updated or deleted file, ascending.
pub fn list_cycles(dir: &Path) -> Result<Vec<u64>, FeedError> {
    let entries = fs::read_dir(dir).map_err(|source| FeedError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut cycles = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| FeedError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let stem = name
            .strip_suffix(".updated.txt")
            .or_else(|| name.strip_suffix(".deleted.txt"));
        if let Some(id) = stem.and_then(|s| s.parse::<u64>().ok()) {
            cycles.push(id);
        }
    }
    cycles.sort_unstable();
    cycles.dedup();
    Ok(cycles)
}

/// A source of changesets that become available over time.
pub trait ChangesetFeed {
    /// Returns every changeset that became available since the last call,
    /// in ascending cycle order.
    fn poll(&mut self, now_ms: u64) -> Result<Vec<Changeset>, FeedError>;
}

/// Watches a directory for new cycles.
///
/// A cycle is considered complete once its `.updated.txt` file exists.
#[derive(Debug)]
pub struct DirFeed {
    dir: PathBuf,
    last_seen: Option<u64>,
}

impl DirFeed {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirFeed {
            dir: dir.into(),
            last_seen: None,
        }
    }
}

impl ChangesetFeed for DirFeed {
    fn poll(&mut self, _now_ms: u64) -> Result<Vec<Changeset>, FeedError> {
        let mut out = Vec::new();
        for id in list_cycles(&self.dir)? {
            if self.last_seen.is_some_and(|seen| id <= seen) {
                continue;
            }
            if !Changeset::updated_file(&self.dir, id).exists() {
                break;
            }
            out.push(Changeset::read_from_dir(&self.dir, id)?);
            self.last_seen = Some(id);
        }
        Ok(out)
    }
}

/// An in-memory feed where each changeset has an availability time.
#[derive(Debug, Default)]
pub struct ScheduledFeed {
    pending: VecDeque<(u64, Changeset)>,
}

impl ScheduledFeed {
    /// `items` must be sorted by availability time.
    pub fn new(items: impl IntoIterator<Item = (u64, Changeset)>) -> Self {
        let pending: VecDeque<_> = items.into_iter().collect();
        debug_assert!(pending.iter().zip(pending.iter().skip(1)).all(|(a, b)| a.0 <= b.0));
        ScheduledFeed { pending }
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }
}

impl ChangesetFeed for ScheduledFeed {
    fn poll(&mut self, now_ms: u64) -> Result<Vec<Changeset>, FeedError> {
        let mut ready = BTreeMap::new();
        while self.pending.front().is_some_and(|(t, _)| *t <= now_ms) {
            let (_, cs) = self.pending.pop_front().expect("front checked");
            ready.insert(cs.cycle_id, cs);
        }
        Ok(ready.into_values().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cycle: u64) -> Changeset {
        Changeset {
            cycle_id: cycle,
            updated_lines: vec!["<http://ex.org/a> <p> \"1\" .".into()],
            deleted_lines: vec!["<http://ex.org/b> <p> \"2\" .".into()],
            categories: vec![("http://ex.org/a".into(), "dbpedia/music".parse().unwrap())],
        }
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cs = sample(7);
        cs.write_to_dir(dir.path()).unwrap();
        assert_eq!(Changeset::read_from_dir(dir.path(), 7).unwrap(), cs);
        assert_eq!(list_cycles(dir.path()).unwrap(), vec![7]);
    }

    #[test]
    fn dir_feed_returns_new_cycles_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut feed = DirFeed::new(dir.path());
        assert!(feed.poll(0).unwrap().is_empty());
        sample(3).write_to_dir(dir.path()).unwrap();
        sample(2).write_to_dir(dir.path()).unwrap();
        let got: Vec<u64> = feed.poll(0).unwrap().iter().map(|c| c.cycle_id).collect();
        assert_eq!(got, vec![2, 3]);
        assert!(feed.poll(0).unwrap().is_empty());
        sample(4).write_to_dir(dir.path()).unwrap();
        assert_eq!(feed.poll(0).unwrap().len(), 1);
    }

    #[test]
    fn scheduled_feed_respects_time() {
        let mut feed = ScheduledFeed::new([(10, sample(1)), (20, sample(2)), (20, sample(3))]);
        assert!(feed.poll(5).unwrap().is_empty());
        assert_eq!(feed.poll(10).unwrap().len(), 1);
        let ids: Vec<u64> = feed.poll(25).unwrap().iter().map(|c| c.cycle_id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(feed.remaining(), 0);
    }

    #[test]
    fn byte_len_counts_newlines() {
        let cs = sample(1);
        let expected = cs.updated_lines[0].len() + cs.deleted_lines[0].len() + 2;
        assert_eq!(cs.byte_len(), expected as u64);
    }
}
