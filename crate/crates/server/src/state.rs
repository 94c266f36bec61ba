//! Shared server state: live design sessions, rooms, session tokens and the
//! snapshot store.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use storyroom_core::provider::Provider;
use storyroom_core::room::{AdvanceTicket, Room, RoomError};
use storyroom_core::story::StoryDocument;
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::store::{SnapshotKind, SnapshotStore, StoreError};

pub const TOKEN_LIFETIME: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub participant_id: String,
    pub room_id: String,
    /// Seconds since the Unix epoch.
    pub expires_at: u64,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct RoomHandle {
    /// Tokio's mutex is fair, so commands apply in arrival order.
    pub room: tokio::sync::Mutex<Room>,
    pub changes: broadcast::Sender<()>,
}

impl RoomHandle {
    fn new(room: Room) -> Arc<Self> {
        let (changes, _) = broadcast::channel(64);
        Arc::new(Self {
            room: tokio::sync::Mutex::new(room),
            changes,
        })
    }

    pub fn notify(&self) {
        let _ = self.changes.send(());
    }
}

pub struct AppState {
    pub provider: Arc<dyn Provider>,
    pub store: SnapshotStore,
    rooms: RwLock<HashMap<String, Arc<RoomHandle>>>,
    designs: RwLock<HashMap<String, Arc<tokio::sync::Mutex<StoryDocument>>>>,
    tokens: Mutex<HashMap<String, SessionToken>>,
    /// Last payload written per object, to skip unchanged flushes.
    saved: Mutex<HashMap<(SnapshotKind, String), String>>,
    next_room: AtomicU64,
    next_design: AtomicU64,
}

impl AppState {
    pub fn new(provider: Arc<dyn Provider>, store: SnapshotStore) -> Arc<Self> {
        Arc::new(Self {
            provider,
            store,
            rooms: RwLock::default(),
            designs: RwLock::default(),
            tokens: Mutex::default(),
            saved: Mutex::default(),
            next_room: AtomicU64::new(1),
            next_design: AtomicU64::new(1),
        })
    }

    fn fresh_id(&self, prefix: &str, counter: &AtomicU64, kind: SnapshotKind) -> String {
        loop {
            let id = format!("{prefix}{}", counter.fetch_add(1, Ordering::SeqCst));
            let in_memory = match kind {
                SnapshotKind::Room => self.rooms.read().unwrap().contains_key(&id),
                _ => self.designs.read().unwrap().contains_key(&id),
            };
            let on_disk = self
                .store
                .versions(kind, &id)
                .map(|v| !v.is_empty())
                .unwrap_or(false);
            if !in_memory && !on_disk {
                return id;
            }
        }
    }

    pub fn fresh_room_id(&self) -> String {
        self.fresh_id("r", &self.next_room, SnapshotKind::Room)
    }

    pub fn fresh_design_id(&self) -> String {
        self.fresh_id("s", &self.next_design, SnapshotKind::Story)
    }

    pub fn insert_room(&self, room: Room) -> Arc<RoomHandle> {
        let id = room.id.clone();
        let handle = RoomHandle::new(room);
        self.rooms.write().unwrap().insert(id, handle.clone());
        handle
    }

    pub fn room(&self, id: &str) -> Result<Arc<RoomHandle>, ApiError> {
        self.rooms
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no room {id}")))
    }

    pub fn insert_design(&self, id: String, doc: StoryDocument) {
        self.designs
            .write()
            .unwrap()
            .insert(id, Arc::new(tokio::sync::Mutex::new(doc)));
    }

    pub fn design(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<StoryDocument>>, ApiError> {
        self.designs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no design session {id}")))
    }

    pub fn mint_token(&self, room_id: &str, participant_id: &str) -> SessionToken {
        let token = SessionToken {
            token: uuid::Uuid::new_v4().simple().to_string(),
            participant_id: participant_id.to_string(),
            room_id: room_id.to_string(),
            expires_at: now_secs() + TOKEN_LIFETIME.as_secs(),
        };
        self.tokens
            .lock()
            .unwrap()
            .insert(token.token.clone(), token.clone());
        token
    }

    /// The participant a token grants in `room_id`.
    pub fn authorize(&self, token: &str, room_id: &str) -> Result<SessionToken, ApiError> {
        let tokens = self.tokens.lock().unwrap();
        let session = tokens
            .get(token)
            .filter(|t| t.expires_at > now_secs())
            .ok_or_else(|| ApiError::unauthorized("unknown or expired session token"))?;
        if session.room_id != room_id {
            return Err(ApiError::forbidden("token belongs to another room"));
        }
        Ok(session.clone())
    }

    /// Runs a generation outside the room lock and applies its result.
    pub async fn run_generation(
        &self,
        handle: &RoomHandle,
        ticket: AdvanceTicket,
    ) -> Result<(), ApiError> {
        let provider = self.provider.clone();
        let outcome = tokio::task::spawn_blocking(move || ticket.run(&*provider))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let mut room = handle.room.lock().await;
        let result = match outcome {
            Ok(outcome) => room.finish_advance(outcome),
            Err(e) => {
                room.abort_advance();
                Err(e)
            }
        };
        drop(room);
        handle.notify();
        result.map_err(ApiError::from)
    }

    pub fn save_room(&self, room: &Room) -> Result<crate::store::SnapshotMeta, StoreError> {
        let meta = self.store.save_room(room)?;
        self.remember(SnapshotKind::Room, &room.id, room.to_room_file());
        Ok(meta)
    }

    pub fn save_design(
        &self,
        id: &str,
        doc: &StoryDocument,
    ) -> Result<crate::store::SnapshotMeta, StoreError> {
        let meta = self.store.save_story(id, doc)?;
        self.remember(SnapshotKind::Story, id, doc.to_story_file());
        Ok(meta)
    }

    fn remember(&self, kind: SnapshotKind, id: &str, payload: String) {
        self.saved
            .lock()
            .unwrap()
            .insert((kind, id.to_string()), payload);
    }

    fn unchanged(&self, kind: SnapshotKind, id: &str, payload: &str) -> bool {
        self.saved
            .lock()
            .unwrap()
            .get(&(kind, id.to_string()))
            .is_some_and(|p| p == payload)
    }

    /// Writes a snapshot of every room and design session that changed
    /// since its last save. Returns the number written.
    pub async fn flush(&self) -> Result<usize, StoreError> {
        let rooms: Vec<Arc<RoomHandle>> = self.rooms.read().unwrap().values().cloned().collect();
        let designs: Vec<(String, Arc<tokio::sync::Mutex<StoryDocument>>)> = self
            .designs
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut written = 0;
        for handle in rooms {
            let room = handle.room.lock().await;
            if !self.unchanged(SnapshotKind::Room, &room.id, &room.to_room_file()) {
                self.save_room(&room)?;
                written += 1;
            }
        }
        for (id, doc) in designs {
            let doc = doc.lock().await;
            if !self.unchanged(SnapshotKind::Story, &id, &doc.to_story_file()) {
                self.save_design(&id, &doc)?;
                written += 1;
            }
        }
        Ok(written)
    }
}

impl From<RoomError> for ApiError {
    fn from(e: RoomError) -> Self {
        crate::error::room_error(e)
    }
}
