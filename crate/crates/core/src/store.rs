//! File-per-project store. Each project lives in `<root>/<id>.tomb.json`;
//! saves go through a temp file that is fsynced and renamed over the target,
//! so a reader sees either the previous or the new version.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;
use tracing::warn;

use crate::error::Coded;
use crate::format::{deserialize, serialize, FormatError};
use crate::model::{ProjectId, StoryInstrument};

pub const PROJECT_SUFFIX: &str = ".tomb.json";
const TEMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("project {0} not found")]
    NotFound(ProjectId),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("storage failure at {path}: {message}")]
    StorageFailure { path: String, message: String },
}

impl Coded for StoreError {
    fn code(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "PROJECT_NOT_FOUND",
            StoreError::Format(e) => e.code(),
            StoreError::StorageFailure { .. } => "STORAGE_FAILURE",
        }
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Simulated crash points for [`ProjectStore::save_with_fault`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFault {
    /// Only the first `n` bytes reach the temp file.
    PartialTempWrite(usize),
    /// The temp file is complete but the rename never happens.
    BeforeRename,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectSummary {
    pub id: ProjectId,
    pub title: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
struct IndexEntry {
    path: PathBuf,
    title: String,
    updated_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct ProjectStore {
    root: PathBuf,
    index: BTreeMap<ProjectId, IndexEntry>,
}

fn id_from_file_name(name: &str) -> Option<ProjectId> {
    if name.starts_with(TEMP_PREFIX) {
        return None;
    }
    name.strip_suffix(PROJECT_SUFFIX)
        .filter(|s| !s.is_empty())
        .map(ProjectId::from)
}

impl ProjectStore {
    /// Opens (creating if needed) a store rooted at `root` and indexes the
    /// project files in it. Temp files left by interrupted saves are ignored;
    /// unreadable project files are skipped with a warning.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| storage(&root, e))?;
        let mut store = Self {
            root,
            index: BTreeMap::new(),
        };
        store.rescan()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Rebuilds the index from the directory contents.
    pub fn rescan(&mut self) -> Result<(), StoreError> {
        self.index.clear();
        let entries = fs::read_dir(&self.root).map_err(|e| storage(&self.root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| storage(&self.root, e))?;
            let name = entry.file_name();
            let Some(id) = name.to_str().and_then(id_from_file_name) else {
                continue;
            };
            match self.read(&id, &entry.path()) {
                Ok(instr) => {
                    self.index.insert(id, Self::entry_for(entry.path(), &instr));
                }
                Err(e) => warn!(path = %entry.path().display(), error = %e, "skipping unreadable project"),
            }
        }
        Ok(())
    }

    fn entry_for(path: PathBuf, instr: &StoryInstrument) -> IndexEntry {
        IndexEntry {
            path,
            title: instr.title(),
            updated_at: instr.updated_at,
        }
    }

    pub fn path_for(&self, id: &ProjectId) -> PathBuf {
        self.root.join(format!("{id}{PROJECT_SUFFIX}"))
    }

    fn read(&self, id: &ProjectId, path: &Path) -> Result<StoryInstrument, StoreError> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(id.clone())
            } else {
                storage(path, e)
            }
        })?;
        let instr = deserialize(&bytes)?;
        if &instr.id != id {
            return Err(FormatError::MalformedDocument {
                location: "id".into(),
                message: format!("file for project {id} holds project {}", instr.id),
            }
            .into());
        }
        Ok(instr)
    }

    pub fn contains(&self, id: &ProjectId) -> bool {
        self.index.contains_key(id)
    }

    pub fn load(&self, id: &ProjectId) -> Result<StoryInstrument, StoreError> {
        self.read(id, &self.path_for(id))
    }

    /// Raw bytes of the project file as stored.
    pub fn load_bytes(&self, id: &ProjectId) -> Result<Vec<u8>, StoreError> {
        let path = self.path_for(id);
        fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(id.clone())
            } else {
                storage(&path, e)
            }
        })
    }

    pub fn save(&mut self, instr: &StoryInstrument) -> Result<(), StoreError> {
        self.write(instr, None)
    }

    /// Runs a save that "crashes" at `fault`. The target file is left as it
    /// was and the temp file stays behind, as after a real crash.
    pub fn save_with_fault(&mut self, instr: &StoryInstrument, fault: SaveFault) -> Result<(), StoreError> {
        self.write(instr, Some(fault))
    }

    fn write(&mut self, instr: &StoryInstrument, fault: Option<SaveFault>) -> Result<(), StoreError> {
        let bytes = serialize(instr)?;
        let target = self.path_for(&instr.id);
        let temp = self
            .root
            .join(format!("{TEMP_PREFIX}{}-{}", instr.id, uuid::Uuid::new_v4().simple()));
        let payload = match fault {
            Some(SaveFault::PartialTempWrite(n)) => &bytes[..n.min(bytes.len())],
            _ => &bytes[..],
        };
        let mut file = File::create(&temp).map_err(|e| storage(&temp, e))?;
        file.write_all(payload).map_err(|e| storage(&temp, e))?;
        file.sync_all().map_err(|e| storage(&temp, e))?;
        drop(file);
        if fault.is_some() {
            return Err(storage(&temp, "simulated crash before rename"));
        }
        fs::rename(&temp, &target).map_err(|e| {
            let _ = fs::remove_file(&temp);
            storage(&target, e)
        })?;
        if let Ok(dir) = File::open(&self.root) {
            let _ = dir.sync_all();
        }
        self.index.insert(instr.id.clone(), Self::entry_for(target, instr));
        Ok(())
    }

    /// Projects sorted by most recent update first, then id.
    pub fn list(&self) -> Vec<ProjectSummary> {
        let mut out: Vec<ProjectSummary> = self
            .index
            .iter()
            .map(|(id, e)| ProjectSummary {
                id: id.clone(),
                title: e.title.clone(),
                updated_at: e.updated_at,
            })
            .collect();
        out.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn delete(&mut self, id: &ProjectId) -> Result<(), StoreError> {
        let entry = self.index.remove(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        fs::remove_file(&entry.path).map_err(|e| storage(&entry.path, e))
    }

    /// Removes temp files left behind by interrupted saves; returns how many.
    pub fn sweep_temp_files(&self) -> Result<usize, StoreError> {
        let mut removed = 0;
        for entry in fs::read_dir(&self.root).map_err(|e| storage(&self.root, e))?.flatten() {
            if entry.file_name().to_string_lossy().starts_with(TEMP_PREFIX) {
                fs::remove_file(entry.path()).map_err(|e| storage(&entry.path(), e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}
