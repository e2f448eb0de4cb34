//! Local replica storage at a Destination.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::uri::{from_file_component, to_file_component, NormalizedUri};

pub trait ReplicaStore: Send {
    fn digest(&self, uri: &NormalizedUri) -> Option<Digest>;
    fn body(&self, uri: &NormalizedUri) -> io::Result<Option<Vec<u8>>>;
    fn put(&mut self, uri: &NormalizedUri, body: &[u8]) -> io::Result<()>;
    /// Returns whether the URI was present.
    fn remove(&mut self, uri: &NormalizedUri) -> io::Result<bool>;
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(uri, digest)` pairs sorted by URI.
    fn listing(&self) -> Vec<(NormalizedUri, Digest)>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryReplica {
    entries: BTreeMap<NormalizedUri, (Vec<u8>, Digest)>,
}

impl MemoryReplica {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ReplicaStore for MemoryReplica {
    fn digest(&self, uri: &NormalizedUri) -> Option<Digest> {
        self.entries.get(uri).map(|(_, d)| *d)
    }

    fn body(&self, uri: &NormalizedUri) -> io::Result<Option<Vec<u8>>> {
        Ok(self.entries.get(uri).map(|(b, _)| b.clone()))
    }

    fn put(&mut self, uri: &NormalizedUri, body: &[u8]) -> io::Result<()> {
        self.entries.insert(uri.clone(), (body.to_vec(), Digest::of(body)));
        Ok(())
    }

    fn remove(&mut self, uri: &NormalizedUri) -> io::Result<bool> {
        Ok(self.entries.remove(uri).is_some())
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn listing(&self) -> Vec<(NormalizedUri, Digest)> {
        self.entries.iter().map(|(u, (_, d))| (u.clone(), *d)).collect()
    }
}

/// One file per resource under `root`, named by the URI's file component.
/// Bodies are written to a temporary file and renamed into place.
#[derive(Debug)]
pub struct FileReplica {
    root: PathBuf,
    index: BTreeMap<NormalizedUri, Digest>,
}

const TMP_PREFIX: &str = ".tmp-";

impl FileReplica {
    /// Opens `root`, creating it if needed and indexing existing files.
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.starts_with(TMP_PREFIX) {
                let _ = fs::remove_file(entry.path());
                continue;
            }
            match from_file_component(name) {
                Ok(uri) => {
                    let body = fs::read(entry.path())?;
                    index.insert(uri, Digest::of(&body));
                }
                Err(_) => log::warn!("ignoring stray file {name:?} in replica"),
            }
        }
        Ok(FileReplica { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, uri: &NormalizedUri) -> PathBuf {
        self.root.join(to_file_component(uri))
    }
}

impl ReplicaStore for FileReplica {
    fn digest(&self, uri: &NormalizedUri) -> Option<Digest> {
        self.index.get(uri).copied()
    }

    fn body(&self, uri: &NormalizedUri) -> io::Result<Option<Vec<u8>>> {
        if !self.index.contains_key(uri) {
            return Ok(None);
        }
        fs::read(self.path_of(uri)).map(Some)
    }

    fn put(&mut self, uri: &NormalizedUri, body: &[u8]) -> io::Result<()> {
        let name = to_file_component(uri);
        let tmp = self.root.join(format!("{TMP_PREFIX}{name}"));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, self.root.join(&name))?;
        self.index.insert(uri.clone(), Digest::of(body));
        Ok(())
    }

    fn remove(&mut self, uri: &NormalizedUri) -> io::Result<bool> {
        if self.index.remove(uri).is_none() {
            return Ok(false);
        }
        match fs::remove_file(self.path_of(uri)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(true),
            Err(e) => Err(e),
        }
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn listing(&self) -> Vec<(NormalizedUri, Digest)> {
        self.index.iter().map(|(u, d)| (u.clone(), *d)).collect()
    }
}
