//! Per-data-dir CLI state: the current project and scene, and how far each
//! scripted-provider file has been consumed, so a script spans invocations.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tomb_core::prompt::PromptKind;
use tomb_core::provider::{ScriptFileError, ScriptedProvider, ScriptedResponses};

const STATE_FILE: &str = ".tomb-cli.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CliState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_project: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_scene: Option<String>,
    /// Keyed by script path and content hash.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub script_cursors: BTreeMap<String, BTreeMap<PromptKind, usize>>,
}

impl CliState {
    fn path(dir: &Path) -> PathBuf {
        dir.join(STATE_FILE)
    }

    pub fn load(dir: &Path) -> Self {
        std::fs::read(Self::path(dir))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = serde_json::to_vec_pretty(self).expect("serializable");
        bytes.push(b'\n');
        std::fs::write(Self::path(dir), bytes)
    }
}

pub struct ScriptSession {
    key: String,
    pub provider: ScriptedProvider,
    start: BTreeMap<PromptKind, usize>,
}

impl ScriptSession {
    /// Loads a script, skipping the replies earlier invocations consumed.
    pub fn open(path: &Path, state: &CliState) -> Result<Self, ScriptFileError> {
        let source = std::fs::read_to_string(path).map_err(|source| ScriptFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut h = DefaultHasher::new();
        source.hash(&mut h);
        let abs = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        let key = format!("{}#{:016x}", abs.display(), h.finish());
        let mut script = ScriptedResponses::parse(&source)?;
        let start = state.script_cursors.get(&key).cloned().unwrap_or_default();
        for (kind, n) in &start {
            script.skip(*kind, *n);
        }
        Ok(Self {
            key,
            provider: ScriptedProvider::new(script),
            start,
        })
    }

    pub fn record(&self, state: &mut CliState) {
        let mut cursor = self.start.clone();
        for (kind, n) in self.provider.consumed_counts() {
            *cursor.entry(kind).or_default() += n;
        }
        state.script_cursors.insert(self.key.clone(), cursor);
    }
}
