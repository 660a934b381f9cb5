//! The authored-pair store: one JSON file, replaced atomically on every
//! mutation.
//!
//! The file is `{"next_id": n, "pairs": [...]}`, which also parses as a
//! benchmark pair file. Mutations are serialized behind one lock and the
//! in-memory copy only changes once the new file is in place.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pitch_epv::epv::benchmark::{BenchmarkError, BenchmarkPair, PairFile};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("pair store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pair store {path} is corrupt: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Invalid(#[from] BenchmarkError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StoreFile {
    next_id: u64,
    pairs: Vec<BenchmarkPair>,
}

#[derive(Debug)]
pub struct PairStore {
    path: PathBuf,
    state: Mutex<StoreFile>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn pair_id(n: u64) -> String {
    format!("pair-{n:06}")
}

impl PairStore {
    /// Opens `path`, starting empty when the file does not exist yet.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let state = match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt {
                path: path.to_path_buf(),
                source,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreFile::default(),
            Err(e) => return Err(io_err(path)(e)),
        };
        Ok(Self {
            path: path.to_path_buf(),
            state: Mutex::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn list(&self) -> PairFile {
        PairFile {
            pairs: self.lock().pairs.clone(),
        }
    }

    /// Validates `pair` (label optional), assigns the next id and persists.
    pub fn create(&self, mut pair: BenchmarkPair) -> Result<BenchmarkPair, StoreError> {
        let mut state = self.lock();
        pair.id = pair_id(state.next_id);
        pair.validate(false)?;
        let mut next = state.clone();
        next.next_id += 1;
        next.pairs.push(pair.clone());
        self.write(&next)?;
        *state = next;
        Ok(pair)
    }

    /// Removes `id` if present; returns whether anything was removed.
    pub fn delete(&self, id: &str) -> Result<bool, StoreError> {
        let mut state = self.lock();
        if !state.pairs.iter().any(|p| p.id == id) {
            return Ok(false);
        }
        let mut next = state.clone();
        next.pairs.retain(|p| p.id != id);
        self.write(&next)?;
        *state = next;
        Ok(true)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StoreFile> {
        // a panic mid-mutation leaves the previous, fully written state
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Writes a sibling temp file, syncs it and renames it over the store.
    fn write(&self, file: &StoreFile) -> Result<(), StoreError> {
        let dir = match self.path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        let json = serde_json::to_vec_pretty(file).expect("pair store serializes");
        tmp.write_all(&json).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
        tmp.persist(&self.path).map_err(|e| io_err(&self.path)(e.error))?;
        Ok(())
    }
}
