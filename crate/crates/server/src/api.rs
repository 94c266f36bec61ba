//! HTTP routes. Request bodies are JSON with turns, transcripts and plots
//! embedded as canonical text.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use storyroom_core::plot::{parse_plot, serialize_plot, Plot};
use storyroom_core::room::{PlotEdit, Room, RoomView};
use storyroom_core::story::{ContextPolicy, Edit, StoryDocument};
use storyroom_core::turn_format::{
    parse_transcript, serialize_transcript, serialize_turn, Diagnostic, PlayerTurn, Role, Turn,
    TurnKind,
};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::state::{AppState, RoomHandle, SessionToken};
use crate::store::SnapshotMeta;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/design", post(create_design))
        .route("/design/{id}", get(get_design))
        .route("/design/{id}/edit", post(edit_design))
        .route("/design/{id}/generate", post(generate_turn))
        .route("/design/{id}/plot", post(generate_plot))
        .route("/design/{id}/save", post(save_design))
        .route("/design/{id}/load", post(load_design))
        .route("/rooms", post(create_room))
        .route("/rooms/{id}/load", post(load_room))
        .route("/rooms/{id}/join", post(join_room))
        .route("/rooms/{id}/view", get(room_view))
        .route("/rooms/{id}/events", get(room_events))
        .route("/rooms/{id}/turns", post(submit_turn))
        .route("/rooms/{id}/advance", post(advance))
        .route("/rooms/{id}/pending", post(resolve_pending))
        .route("/rooms/{id}/control", post(toggle_control))
        .route("/rooms/{id}/plot/events", post(edit_plot))
        .route("/rooms/{id}/plot/played", post(mark_played))
        .route("/rooms/{id}/feedback", post(feedback))
        .route("/rooms/{id}/chat", post(chat))
        .route("/rooms/{id}/save", post(save_room))
        .with_state(state)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

// ---- text helpers

/// Parses exactly one turn. Text without a header is read as `default`.
pub fn parse_one_turn(text: &str, default: Option<TurnKind>) -> Result<Turn, ApiError> {
    let starts_with_header = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(storyroom_core::turn_format::header_kind)
        .is_some();
    let text = match default {
        Some(kind) if !starts_with_header => format!("{}\n{}", kind.header(), text),
        _ => text.to_string(),
    };
    let parsed = parse_transcript(&text, true).map_err(|e| ApiError::invalid(e.to_string()))?;
    reject_diagnostics(&parsed.diagnostics)?;
    match <[Turn; 1]>::try_from(parsed.turns) {
        Ok([turn]) => {
            if default.is_some_and(|k| k != turn.kind()) {
                return Err(ApiError::invalid(format!(
                    "expected a {} turn",
                    default.unwrap().header()
                )));
            }
            Ok(turn)
        }
        Err(turns) => Err(ApiError::invalid(format!(
            "expected exactly one turn, found {}",
            turns.len()
        ))),
    }
}

/// Submitted text must parse cleanly; lenient recovery is for model output.
fn reject_diagnostics(diagnostics: &[Diagnostic]) -> Result<(), ApiError> {
    match diagnostics.first() {
        Some(d) => Err(ApiError::invalid(format!(
            "line {}: {}",
            d.lines.0, d.message
        ))),
        None => Ok(()),
    }
}

fn parse_turns(text: &str) -> Result<Vec<Turn>, ApiError> {
    let parsed = parse_transcript(text, true).map_err(|e| ApiError::invalid(e.to_string()))?;
    reject_diagnostics(&parsed.diagnostics)?;
    if !parsed.preamble.is_empty() {
        return Err(ApiError::invalid("text before the first turn header"));
    }
    Ok(parsed.turns)
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::unauthorized("missing bearer token"))
}

// ---- health

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub provider: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
        provider: state.provider.mode().into(),
    })
}

// ---- design sessions

#[derive(Debug, Serialize, Deserialize)]
pub struct DesignView {
    pub session_id: String,
    pub opening_story: String,
    pub instructions: String,
    pub archive_summary: Option<String>,
    pub archived_turn_count: usize,
    pub turn_count: usize,
    /// Every turn, archived ones included.
    pub transcript: String,
    /// Who speaks next.
    pub next_kind: TurnKind,
    pub story_file: String,
}

impl DesignView {
    fn new(id: &str, doc: &StoryDocument) -> Self {
        let turns: Vec<Turn> = doc.all_turns().cloned().collect();
        Self {
            session_id: id.to_string(),
            opening_story: doc.opening_story().to_string(),
            instructions: doc.instructions().to_string(),
            archive_summary: doc.archive_summary().map(str::to_string),
            archived_turn_count: doc.archived_turn_count(),
            turn_count: doc.turn_count(),
            transcript: serialize_transcript(&turns),
            next_kind: doc.next_kind(),
            story_file: doc.to_story_file(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateDesign {
    #[serde(default)]
    pub opening_story: String,
    #[serde(default)]
    pub instructions: String,
    /// Optional starting turns.
    #[serde(default)]
    pub transcript: Option<String>,
}

async fn create_design(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateDesign>,
) -> ApiResult<DesignView> {
    let turns = match &body.transcript {
        Some(text) => parse_turns(text)?,
        None => Vec::new(),
    };
    let doc = StoryDocument::new(body.opening_story, body.instructions).with_turns(turns);
    let id = state.fresh_design_id();
    let view = DesignView::new(&id, &doc);
    state.insert_design(id, doc);
    Ok(Json(view))
}

async fn get_design(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<DesignView> {
    let doc = state.design(&id)?;
    let doc = doc.lock().await;
    Ok(Json(DesignView::new(&id, &doc)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DesignEdit {
    Append { turn: String },
    Replace { index: usize, turn: String },
    Delete { index: usize },
    TruncateAfter { index: usize },
    SetOpeningStory { text: String },
    SetInstructions { text: String },
}

async fn edit_design(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(edit): Json<DesignEdit>,
) -> ApiResult<DesignView> {
    let doc = state.design(&id)?;
    let mut doc = doc.lock().await;
    let next = match edit {
        DesignEdit::Append { turn } => {
            doc.apply_edit(Edit::Append(parse_one_turn(&turn, None)?))?
        }
        DesignEdit::Replace { index, turn } => {
            doc.apply_edit(Edit::Replace(index, parse_one_turn(&turn, None)?))?
        }
        DesignEdit::Delete { index } => doc.apply_edit(Edit::Delete(index))?,
        DesignEdit::TruncateAfter { index } => doc.apply_edit(Edit::TruncateAfter(index))?,
        DesignEdit::SetOpeningStory { text } => {
            let mut next = doc.clone();
            next.set_opening_story(text);
            next
        }
        DesignEdit::SetInstructions { text } => {
            let mut next = doc.clone();
            next.set_instructions(text);
            next
        }
    };
    *doc = next;
    Ok(Json(DesignView::new(&id, &doc)))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct GenerateTurn {
    /// Defaults to whoever speaks next.
    #[serde(default)]
    pub kind: Option<TurnKind>,
    /// Beginning of the turn, already written by the designer.
    #[serde(default)]
    pub partial: Option<String>,
    /// Append the generated turn to the document.
    #[serde(default = "yes")]
    pub append: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GeneratedTurn {
    pub turn: String,
    pub document: DesignView,
}

async fn generate_turn(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<GenerateTurn>,
) -> ApiResult<GeneratedTurn> {
    let doc = state.design(&id)?;
    let mut doc = doc.lock().await;
    let snapshot = doc.clone();
    let provider = state.provider.clone();
    let kind = body.kind.unwrap_or_else(|| doc.next_kind());
    let (next, turn) = tokio::task::spawn_blocking(move || {
        let archived = snapshot.maybe_archive(&*provider, &ContextPolicy::default())?;
        let turn = archived.generate_next_turn(kind, body.partial.as_deref(), &*provider)?;
        Ok::<_, storyroom_core::story::StoryError>((archived, turn))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    *doc = if body.append {
        next.apply_edit(Edit::Append(turn.clone()))?
    } else {
        next
    };
    Ok(Json(GeneratedTurn {
        turn: serialize_turn(&turn),
        document: DesignView::new(&id, &doc),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GeneratedPlot {
    pub plot: Plot,
    pub plot_text: String,
    pub snapshot: SnapshotMeta,
}

async fn generate_plot(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<GeneratedPlot> {
    let doc = state.design(&id)?;
    let doc = doc.lock().await.clone();
    let provider = state.provider.clone();
    let plot = tokio::task::spawn_blocking(move || doc.generate_plot(&*provider))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let snapshot = state.store.save_plot(&id, &plot)?;
    Ok(Json(GeneratedPlot {
        plot_text: serialize_plot(&plot),
        plot,
        snapshot,
    }))
}

async fn save_design(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<SnapshotMeta> {
    let doc = state.design(&id)?;
    let doc = doc.lock().await;
    Ok(Json(state.save_design(&id, &doc)?))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct LoadSnapshot {
    #[serde(default)]
    pub version: Option<u32>,
}

/// Replaces (or creates) the session with a stored story.
async fn load_design(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<LoadSnapshot>>,
) -> ApiResult<DesignView> {
    let version = body.and_then(|b| b.0.version);
    let (_, doc) = state.store.load_story(&id, version)?;
    let view = DesignView::new(&id, &doc);
    match state.design(&id) {
        Ok(live) => *live.lock().await = doc,
        Err(_) => state.insert_design(id, doc),
    }
    Ok(Json(view))
}

// ---- rooms

#[derive(Debug, Serialize, Deserialize)]
pub struct Joined {
    pub room_id: String,
    pub participant_id: String,
    pub token: String,
    pub expires_at: u64,
    pub view: ViewResponse,
}

impl Joined {
    fn new(token: SessionToken, room: &Room) -> Result<Self, ApiError> {
        Ok(Self {
            view: ViewResponse::new(room.view_for(&token.participant_id)?),
            room_id: token.room_id,
            participant_id: token.participant_id,
            token: token.token,
            expires_at: token.expires_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewResponse {
    pub view: RoomView,
    /// The view's transcript as canonical text.
    pub transcript_text: String,
}

impl ViewResponse {
    pub fn new(view: RoomView) -> Self {
        Self {
            transcript_text: view.transcript_text(),
            view,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateRoom {
    /// Plot as plot text.
    pub plot: String,
    /// Take opening story and instructions from this design session.
    #[serde(default)]
    pub design_session: Option<String>,
    #[serde(default)]
    pub opening_story: Option<String>,
    #[serde(default)]
    pub instructions: Option<String>,
    #[serde(default)]
    pub feedback_prompts: Vec<String>,
    #[serde(default)]
    pub round_robin: bool,
    /// The creator joins as the room's designer.
    pub display_name: String,
}

async fn create_room(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateRoom>,
) -> ApiResult<Joined> {
    let plot = parse_plot(&body.plot).map_err(|e| ApiError::invalid(e.to_string()))?;
    let (mut opening, mut instructions) = (String::new(), String::new());
    if let Some(session) = &body.design_session {
        let doc = state.design(session)?;
        let doc = doc.lock().await;
        opening = doc.opening_story().to_string();
        instructions = doc.instructions().to_string();
    }
    let opening = body.opening_story.unwrap_or(opening);
    let instructions = body.instructions.unwrap_or(instructions);
    let id = state.fresh_room_id();
    let mut room = Room::create(
        id.clone(),
        plot,
        opening,
        instructions,
        body.feedback_prompts,
    )?;
    room.round_robin = body.round_robin;
    let designer = room.join(body.display_name, Role::Designer);
    let token = state.mint_token(&id, &designer);
    let joined = Joined::new(token, &room)?;
    state.insert_room(room);
    Ok(Json(joined))
}

/// Brings a stored room back online. Returns a token for its first
/// designer.
async fn load_room(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<LoadSnapshot>>,
) -> ApiResult<Joined> {
    if state.room(&id).is_ok() {
        return Err(ApiError::new(
            axum::http::StatusCode::CONFLICT,
            "conflict",
            format!("room {id} is already open"),
        ));
    }
    let version = body.and_then(|b| b.0.version);
    let (_, mut room) = state.store.load_room(&id, version)?;
    let designer = match room.participants.iter().find(|p| p.role == Role::Designer) {
        Some(p) => p.id.clone(),
        None => room.join("designer", Role::Designer),
    };
    let token = state.mint_token(&id, &designer);
    let joined = Joined::new(token, &room)?;
    state.insert_room(room);
    Ok(Json(joined))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinRoom {
    pub display_name: String,
    #[serde(default = "player_role")]
    pub role: Role,
}

fn player_role() -> Role {
    Role::Player
}

/// Players join freely; adding a designer takes a designer's token.
async fn join_room(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<JoinRoom>,
) -> ApiResult<Joined> {
    let handle = state.room(&id)?;
    let mut room = handle.room.lock().await;
    if body.role == Role::Designer {
        let caller = state.authorize(bearer(&headers)?, &id)?;
        if room.participant(&caller.participant_id)?.role != Role::Designer {
            return Err(ApiError::forbidden("only designers may add designers"));
        }
    }
    let pid = room.join(body.display_name, body.role);
    let token = state.mint_token(&id, &pid);
    let joined = Joined::new(token, &room)?;
    drop(room);
    handle.notify();
    Ok(Json(joined))
}

struct Caller {
    handle: Arc<RoomHandle>,
    participant: String,
}

fn caller(state: &AppState, id: &str, headers: &HeaderMap) -> Result<Caller, ApiError> {
    let handle = state.room(id)?;
    let token = state.authorize(bearer(headers)?, id)?;
    Ok(Caller {
        handle,
        participant: token.participant_id,
    })
}

/// Applies a room command under the room lock and returns the caller's
/// view.
async fn command(
    state: &AppState,
    id: &str,
    headers: &HeaderMap,
    f: impl FnOnce(&mut Room, &str) -> Result<(), ApiError>,
) -> ApiResult<ViewResponse> {
    let Caller {
        handle,
        participant,
    } = caller(state, id, headers)?;
    let mut room = handle.room.lock().await;
    f(&mut room, &participant)?;
    let view = room.view_for(&participant)?;
    drop(room);
    handle.notify();
    Ok(Json(ViewResponse::new(view)))
}

async fn room_view(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let Caller {
        handle,
        participant,
    } = caller(&state, &id, &headers)?;
    let view = handle.room.lock().await.view_for(&participant)?;
    let wants_text = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/plain"));
    if wants_text {
        return Ok(view.transcript_text().into_response());
    }
    Ok(Json(ViewResponse::new(view)).into_response())
}

/// Server-sent events: the caller's full view now and after every change.
async fn room_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let Caller {
        handle,
        participant,
    } = caller(&state, &id, &headers)?;
    let changes = handle.changes.subscribe();
    let stream = stream::unfold(
        (handle, participant, changes, true),
        |(handle, participant, mut changes, first)| async move {
            if !first {
                if let Err(RecvError::Closed) = changes.recv().await {
                    return None;
                }
            }
            let view = handle.room.lock().await.view_for(&participant).ok()?;
            let data = serde_json::to_string(&ViewResponse::new(view)).ok()?;
            let event = Event::default().event("view").data(data);
            Some((Ok(event), (handle, participant, changes, false)))
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitTurn {
    /// A player turn; the `Player:` header is optional.
    pub turn: String,
}

async fn submit_turn(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<SubmitTurn>,
) -> ApiResult<ViewResponse> {
    let turn = parse_one_turn(&body.turn, Some(TurnKind::Player))?;
    let Turn::Player(turn) = turn else {
        unreachable!("parse_one_turn checks the kind")
    };
    command(&state, &id, &headers, |room, me| {
        Ok(room.submit_player_turn(
            me,
            PlayerTurn {
                author: None,
                ..turn
            },
        )?)
    })
    .await
}

/// Generates the next game turn. The room stays readable while the model
/// runs; the response arrives once the turn is committed or held.
async fn advance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<ViewResponse> {
    let Caller {
        handle,
        participant,
    } = caller(&state, &id, &headers)?;
    let ticket = {
        let mut room = handle.room.lock().await;
        room.participant(&participant)?;
        room.begin_advance()?
    };
    handle.notify();
    state.run_generation(&handle, ticket).await?;
    let view = handle.room.lock().await.view_for(&participant)?;
    Ok(Json(ViewResponse::new(view)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ResolvePending {
    /// Commit the pending turn, possibly edited. The `Game:` header is
    /// optional.
    Approve {
        turn: String,
    },
    Regenerate,
}

async fn resolve_pending(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<ResolvePending>,
) -> ApiResult<ViewResponse> {
    match body {
        ResolvePending::Approve { turn } => {
            let Turn::Game(turn) = parse_one_turn(&turn, Some(TurnKind::Game))? else {
                unreachable!("parse_one_turn checks the kind")
            };
            command(&state, &id, &headers, |room, me| {
                Ok(room.approve_pending_turn(me, turn)?)
            })
            .await
        }
        ResolvePending::Regenerate => {
            let Caller {
                handle,
                participant,
            } = caller(&state, &id, &headers)?;
            let ticket = handle.room.lock().await.begin_regenerate(&participant)?;
            handle.notify();
            state.run_generation(&handle, ticket).await?;
            let view = handle.room.lock().await.view_for(&participant)?;
            Ok(Json(ViewResponse::new(view)))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToggleControl {
    pub npc_id: String,
}

async fn toggle_control(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<ToggleControl>,
) -> ApiResult<ViewResponse> {
    command(&state, &id, &headers, |room, me| {
        Ok(room.toggle_npc_control(me, &body.npc_id)?)
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditPlot {
    pub edits: Vec<PlotEdit>,
}

async fn edit_plot(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<EditPlot>,
) -> ApiResult<ViewResponse> {
    command(&state, &id, &headers, |room, me| {
        Ok(room.edit_plot_events(me, &body.edits)?)
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MarkPlayed {
    pub index: usize,
}

async fn mark_played(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<MarkPlayed>,
) -> ApiResult<ViewResponse> {
    command(&state, &id, &headers, |room, me| {
        Ok(room.mark_event_played(me, body.index)?)
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitFeedback {
    pub turn_index: usize,
    pub label: String,
    #[serde(default)]
    pub text: Option<String>,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<SubmitFeedback>,
) -> ApiResult<ViewResponse> {
    command(&state, &id, &headers, |room, me| {
        Ok(room.submit_feedback(me, body.turn_index, &body.label, body.text)?)
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Chat {
    pub text: String,
}

async fn chat(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<Chat>,
) -> ApiResult<ViewResponse> {
    command(&state, &id, &headers, |room, me| {
        Ok(room.chat(me, &body.text)?)
    })
    .await
}

async fn save_room(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<SnapshotMeta> {
    let Caller {
        handle,
        participant,
    } = caller(&state, &id, &headers)?;
    let room = handle.room.lock().await;
    if room.participant(&participant)?.role != Role::Designer {
        return Err(ApiError::forbidden("only designers may save the room"));
    }
    Ok(Json(state.save_room(&room)?))
}
