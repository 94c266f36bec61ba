//! Append-only, versioned snapshot files.
//!
//! Layout: `<data_dir>/<kind>/<id>/v0001.<ext>`. Each save writes a new
//! version; nothing is ever overwritten, so a snapshot that fails to load is
//! still on disk for inspection.

use std::collections::HashMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use storyroom_core::plot::{parse_plot, serialize_plot, Plot};
use storyroom_core::room::Room;
use storyroom_core::story::StoryDocument;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Story,
    Plot,
    Room,
}

impl SnapshotKind {
    fn dir(self) -> &'static str {
        match self {
            SnapshotKind::Story => "stories",
            SnapshotKind::Plot => "plots",
            SnapshotKind::Room => "rooms",
        }
    }

    fn ext(self) -> &'static str {
        match self {
            SnapshotKind::Story => "story",
            SnapshotKind::Plot => "plot",
            SnapshotKind::Room => "room",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub kind: SnapshotKind,
    pub id: String,
    pub version: u32,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no {kind:?} snapshot {id}{}", version.map(|v| format!(" version {v}")).unwrap_or_default())]
    NotFound {
        kind: SnapshotKind,
        id: String,
        version: Option<u32>,
    },
    #[error("snapshot {} does not decode: {message}", path.display())]
    CorruptSnapshot { path: PathBuf, message: String },
    #[error("invalid object id {0:?}")]
    InvalidId(String),
    #[error("snapshot storage: {0}")]
    Io(#[from] std::io::Error),
}

type ObjectKey = (SnapshotKind, String);

#[derive(Clone)]
pub struct SnapshotStore {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<ObjectKey, Arc<Mutex<()>>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn version_of(path: &Path, ext: &str) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix('v')?
        .strip_suffix(ext)?
        .strip_suffix('.')?
        .parse()
        .ok()
}

impl SnapshotStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            locks: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_dir(&self, kind: SnapshotKind, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(kind.dir()).join(id))
    }

    fn lock(&self, kind: SnapshotKind, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        locks.entry((kind, id.to_string())).or_default().clone()
    }

    /// Versions present on disk, ascending.
    pub fn versions(&self, kind: SnapshotKind, id: &str) -> Result<Vec<u32>, StoreError> {
        let dir = self.object_dir(kind, id)?;
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut versions = Vec::new();
        for entry in entries {
            if let Some(v) = version_of(&entry?.path(), kind.ext()) {
                versions.push(v);
            }
        }
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn save_raw(
        &self,
        kind: SnapshotKind,
        id: &str,
        payload: &str,
    ) -> Result<SnapshotMeta, StoreError> {
        let dir = self.object_dir(kind, id)?;
        let lock = self.lock(kind, id);
        let _guard = lock.lock().unwrap();
        fs::create_dir_all(&dir)?;
        let version = self.versions(kind, id)?.last().copied().unwrap_or(0) + 1;
        let path = dir.join(format!("v{version:04}.{}", kind.ext()));
        let tmp = dir.join(format!(".v{version:04}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(payload.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        tracing::debug!(?kind, id, version, "snapshot saved");
        Ok(SnapshotMeta {
            kind,
            id: id.to_string(),
            version,
            created_at,
        })
    }

    /// Latest version when `version` is `None`.
    pub fn load_raw(
        &self,
        kind: SnapshotKind,
        id: &str,
        version: Option<u32>,
    ) -> Result<(SnapshotMeta, String, PathBuf), StoreError> {
        let not_found = || StoreError::NotFound {
            kind,
            id: id.to_string(),
            version,
        };
        let versions = self.versions(kind, id)?;
        let version = match version {
            Some(v) if versions.contains(&v) => v,
            Some(_) => return Err(not_found()),
            None => *versions.last().ok_or_else(not_found)?,
        };
        let path = self
            .object_dir(kind, id)?
            .join(format!("v{version:04}.{}", kind.ext()));
        let bytes = fs::read(&path)?;
        let created_at = fs::metadata(&path)?
            .modified()
            .ok()
            .and_then(|m| m.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let payload = String::from_utf8(bytes).map_err(|e| StoreError::CorruptSnapshot {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let meta = SnapshotMeta {
            kind,
            id: id.to_string(),
            version,
            created_at,
        };
        Ok((meta, payload, path))
    }

    pub fn save_story(&self, id: &str, doc: &StoryDocument) -> Result<SnapshotMeta, StoreError> {
        self.save_raw(SnapshotKind::Story, id, &doc.to_story_file())
    }

    pub fn load_story(
        &self,
        id: &str,
        version: Option<u32>,
    ) -> Result<(SnapshotMeta, StoryDocument), StoreError> {
        let (meta, text, path) = self.load_raw(SnapshotKind::Story, id, version)?;
        let doc =
            StoryDocument::parse_story_file(&text).map_err(|e| StoreError::CorruptSnapshot {
                path,
                message: e.to_string(),
            })?;
        Ok((meta, doc))
    }

    pub fn save_plot(&self, id: &str, plot: &Plot) -> Result<SnapshotMeta, StoreError> {
        let mut text = serialize_plot(plot);
        text.push('\n');
        self.save_raw(SnapshotKind::Plot, id, &text)
    }

    pub fn load_plot(
        &self,
        id: &str,
        version: Option<u32>,
    ) -> Result<(SnapshotMeta, Plot), StoreError> {
        let (meta, text, path) = self.load_raw(SnapshotKind::Plot, id, version)?;
        let plot = parse_plot(&text).map_err(|e| StoreError::CorruptSnapshot {
            path,
            message: e.to_string(),
        })?;
        Ok((meta, plot))
    }

    pub fn save_room(&self, room: &Room) -> Result<SnapshotMeta, StoreError> {
        self.save_raw(SnapshotKind::Room, &room.id, &room.to_room_file())
    }

    pub fn load_room(
        &self,
        id: &str,
        version: Option<u32>,
    ) -> Result<(SnapshotMeta, Room), StoreError> {
        let (meta, text, path) = self.load_raw(SnapshotKind::Room, id, version)?;
        let room = Room::parse_room_file(&text).map_err(|e| StoreError::CorruptSnapshot {
            path,
            message: e.to_string(),
        })?;
        Ok((meta, room))
    }
}
