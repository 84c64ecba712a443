//! Append-only versioned model store.
//!
//! On disk a registry is a directory holding one checkpoint file per version
//! plus `index.json` with the metadata, parameter checksums and the active
//! pointer.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionMetadata {
    pub strategy: String,
    pub trained_on: Vec<String>,
    pub parent_version: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl VersionMetadata {
    /// Metadata stamped with the current wall-clock time.
    pub fn now(strategy: impl Into<String>, trained_on: Vec<String>, parent_version: Option<u64>) -> Self {
        VersionMetadata {
            strategy: strategy.into(),
            trained_on,
            parent_version,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub version: u64,
    pub metadata: VersionMetadata,
    /// SHA-256 of the parameter bytes at registration.
    pub checksum: String,
    pub checkpoint: Arc<Checkpoint>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    version: u64,
    file: String,
    checksum: String,
    metadata: VersionMetadata,
}

#[derive(Serialize, Deserialize)]
struct Index {
    active_version: Option<u64>,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Default)]
pub struct ModelRegistry {
    entries: Vec<RegistryEntry>,
    active: Option<u64>,
    root: Option<PathBuf>,
}

fn checkpoint_file(version: u64) -> String {
    format!("v{version:06}.json")
}

impl ModelRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a registry persisted under `dir`. Every stored
    /// checkpoint is re-validated against its recorded checksum.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut reg = ModelRegistry {
            root: Some(dir.to_path_buf()),
            ..Self::default()
        };
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Ok(reg);
        }
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: Index = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("unreadable registry index: {e}")))?;
        for (i, e) in index.entries.into_iter().enumerate() {
            if e.version != i as u64 + 1 {
                return Err(Error::Validation(format!(
                    "registry index out of sequence at version {}",
                    e.version
                )));
            }
            let ckpt = Checkpoint::load(&dir.join(&e.file))?;
            if ckpt.params.checksum() != e.checksum {
                return Err(Error::Validation(format!("checkpoint v{} fails its checksum", e.version)));
            }
            reg.entries.push(RegistryEntry {
                version: e.version,
                metadata: e.metadata,
                checksum: e.checksum,
                checkpoint: Arc::new(ckpt),
            });
        }
        if let Some(v) = index.active_version {
            reg.entry(v)?;
        }
        reg.active = index.active_version;
        Ok(reg)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn persist_index(&self) -> Result<()> {
        let Some(dir) = &self.root else { return Ok(()) };
        let index = Index {
            active_version: self.active,
            entries: self
                .entries
                .iter()
                .map(|e| IndexEntry {
                    version: e.version,
                    file: checkpoint_file(e.version),
                    checksum: e.checksum.clone(),
                    metadata: e.metadata.clone(),
                })
                .collect(),
        };
        let tmp = dir.join(format!("{INDEX_FILE}.tmp"));
        let path = dir.join(INDEX_FILE);
        fs::write(&tmp, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Appends `checkpoint` as the next version. The active pointer is left
    /// alone.
    pub fn register(&mut self, checkpoint: Checkpoint, metadata: VersionMetadata) -> Result<u64> {
        checkpoint.validate()?;
        if let Some(p) = metadata.parent_version {
            self.entry(p)
                .map_err(|_| Error::Validation(format!("parent version {p} is not registered")))?;
        }
        let version = self.entries.last().map_or(1, |e| e.version + 1);
        if let Some(dir) = &self.root {
            let path = dir.join(checkpoint_file(version));
            checkpoint.save(&path)?;
        }
        self.entries.push(RegistryEntry {
            version,
            checksum: checkpoint.params.checksum(),
            metadata,
            checkpoint: Arc::new(checkpoint),
        });
        self.persist_index()?;
        Ok(version)
    }

    pub fn activate(&mut self, version: u64) -> Result<()> {
        self.entry(version)?;
        if self.active != Some(version) {
            self.active = Some(version);
            self.persist_index()?;
        }
        Ok(())
    }

    /// Points serving back at an earlier version. History is kept.
    pub fn rollback(&mut self, version: u64) -> Result<()> {
        self.activate(version)
    }

    pub fn entry(&self, version: u64) -> Result<&RegistryEntry> {
        version
            .checked_sub(1)
            .and_then(|i| self.entries.get(i as usize))
            .ok_or_else(|| Error::NotFound(format!("model version {version}")))
    }

    pub fn active_version(&self) -> Option<u64> {
        self.active
    }

    pub fn active(&self) -> Result<&RegistryEntry> {
        match self.active {
            Some(v) => self.entry(v),
            None => Err(Error::ServiceUnavailable("no active model version".into())),
        }
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
