//! Game room: a plot-seeded multiplayer session.
//!
//! Players submit turns, the model writes game turns, and designers can
//! take over NPCs (Wizard-of-Oz control), edit unplayed plot events and
//! read player feedback. Every mutation goes through a `Room` method, which
//! either applies fully or leaves the room untouched.
//!
//! Generation runs in three steps so that the model call can happen outside
//! whatever lock serializes the room: [`Room::begin_advance`] captures
//! everything the call needs, [`AdvanceTicket::run`] talks to the provider,
//! and [`Room::finish_advance`] or [`Room::abort_advance`] applies the result.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plot::{KeyEvent, NpcSnapshot, Plot};
use crate::prompt::{build_game_room_next_turn, CompletionRequest};
use crate::provider::{Provider, ProviderError};
use crate::story::ContextPolicy;
use crate::summarizer::{extract_npcs, summarize_history, SummarizeError};
use crate::turn_format::{
    parse_transcript, redact_turn, same_npc, serialize_transcript, serialize_turn, GameTurn,
    PlayerTurn, Role, Turn, TurnKind, VisibilityMap,
};

pub const FREE_LABEL: &str = "free";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub display_name: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub turn_index: usize,
    pub author: String,
    pub label: String,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub author: String,
    pub text: String,
}

/// A generated game turn held back for designer approval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTurn {
    pub turn: GameTurn,
    pub controlled_ids: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Approve(GameTurn),
    Regenerate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlotEdit {
    Replace { index: usize, text: String },
    Insert { index: usize, text: String },
    Delete { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Waiting for player turns or an advance.
    Ready,
    Generating,
    /// A generated turn waits for designer approval.
    AwaitingApproval,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoomError {
    #[error("plot needs a title and at least one key event")]
    InvalidPlot,
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("a game turn is being generated or awaits approval")]
    NotYourTurnPhase,
    #[error("it is {expected}'s turn")]
    OutOfOrder { expected: String },
    #[error("the game turn can only advance after a player turn")]
    AwaitingPlayerTurn,
    #[error("turn is empty")]
    EmptyTurn,
    #[error("no turn is waiting for approval")]
    NoPendingTurn,
    #[error("no generation is in flight")]
    NoGenerationInFlight,
    #[error("only designers may do this")]
    NotDesigner,
    #[error("only players may give feedback")]
    NotPlayer,
    #[error("no NPC named {0}")]
    UnknownNpc(String),
    #[error("NPC control cannot change while a game turn is being generated or awaits approval")]
    ControlLocked,
    #[error("key event {0} has already been played")]
    EventAlreadyPlayed(usize),
    #[error("index {index} is out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("turn {0} is not a game turn")]
    InvalidTurnRef(usize),
    #[error("unknown feedback label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("the model returned an empty completion")]
    EmptyCompletion,
    #[error("could not read a game turn from the completion")]
    ParseFailure,
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    pub opening_story: String,
    pub instructions: String,
    pub plot: Plot,
    /// Every turn played, archived ones included.
    pub transcript: Vec<Turn>,
    pub archived_turn_count: usize,
    pub archive_summary: Option<String>,
    pub participants: Vec<Participant>,
    pub npc_control: BTreeSet<String>,
    pub pending_turn: Option<PendingTurn>,
    pub feedback_prompts: Vec<String>,
    pub feedback_items: Vec<FeedbackItem>,
    pub chat_log: Vec<ChatMessage>,
    /// Designer-only warnings, e.g. a controlled NPC mentioned in prose.
    pub notices: Vec<String>,
    pub generation_in_flight: bool,
    /// Players must submit in join order.
    pub round_robin: bool,
    pub context_policy: ContextPolicy,
    next_participant: usize,
}

impl Room {
    pub fn create(
        id: impl Into<String>,
        mut plot: Plot,
        opening_story: impl Into<String>,
        instructions: impl Into<String>,
        feedback_prompts: Vec<String>,
    ) -> Result<Room, RoomError> {
        if !plot.is_valid() {
            return Err(RoomError::InvalidPlot);
        }
        for event in &mut plot.key_events {
            event.played = false;
        }
        Ok(Room {
            id: id.into(),
            opening_story: opening_story.into(),
            instructions: instructions.into(),
            plot,
            transcript: Vec::new(),
            archived_turn_count: 0,
            archive_summary: None,
            participants: Vec::new(),
            npc_control: BTreeSet::new(),
            pending_turn: None,
            feedback_prompts,
            feedback_items: Vec::new(),
            chat_log: Vec::new(),
            notices: Vec::new(),
            generation_in_flight: false,
            round_robin: false,
            context_policy: ContextPolicy::default(),
            next_participant: 1,
        })
    }

    pub fn live_turns(&self) -> &[Turn] {
        &self.transcript[self.archived_turn_count..]
    }

    pub fn phase(&self) -> Phase {
        if self.generation_in_flight {
            Phase::Generating
        } else if self.pending_turn.is_some() {
            Phase::AwaitingApproval
        } else {
            Phase::Ready
        }
    }

    pub fn participant(&self, id: &str) -> Result<&Participant, RoomError> {
        self.participants
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| RoomError::UnknownParticipant(id.to_string()))
    }

    fn designer(&self, id: &str) -> Result<&Participant, RoomError> {
        let p = self.participant(id)?;
        if p.role != Role::Designer {
            return Err(RoomError::NotDesigner);
        }
        Ok(p)
    }

    /// Adds a participant and returns its id.
    pub fn join(&mut self, display_name: impl Into<String>, role: Role) -> String {
        let id = format!("p{}", self.next_participant);
        self.next_participant += 1;
        self.participants.push(Participant {
            id: id.clone(),
            display_name: display_name.into(),
            role,
        });
        id
    }

    fn expected_player(&self) -> Option<&Participant> {
        let players: Vec<&Participant> = self
            .participants
            .iter()
            .filter(|p| p.role == Role::Player)
            .collect();
        if players.is_empty() {
            return None;
        }
        let played = self
            .transcript
            .iter()
            .filter(|t| t.kind() == TurnKind::Player)
            .count();
        Some(players[played % players.len()])
    }

    pub fn submit_player_turn(
        &mut self,
        participant: &str,
        mut turn: PlayerTurn,
    ) -> Result<(), RoomError> {
        let author = self.participant(participant)?;
        if self.phase() != Phase::Ready {
            return Err(RoomError::NotYourTurnPhase);
        }
        if self.round_robin && author.role == Role::Player {
            if let Some(expected) = self.expected_player() {
                if expected.id != author.id {
                    return Err(RoomError::OutOfOrder {
                        expected: expected.display_name.clone(),
                    });
                }
            }
        }
        if turn.is_empty() {
            return Err(RoomError::EmptyTurn);
        }
        turn.author = Some(author.id.clone());
        self.transcript.push(Turn::Player(turn));
        Ok(())
    }

    /// Starts generating the next game turn.
    ///
    /// Allowed on an empty transcript (the opening scene) or after a player
    /// turn. Marks the room as generating until the ticket is finished or
    /// aborted.
    pub fn begin_advance(&mut self) -> Result<AdvanceTicket, RoomError> {
        if self.phase() != Phase::Ready {
            return Err(RoomError::NotYourTurnPhase);
        }
        if self
            .transcript
            .last()
            .is_some_and(|t| t.kind() == TurnKind::Game)
        {
            return Err(RoomError::AwaitingPlayerTurn);
        }
        self.generation_in_flight = true;
        Ok(AdvanceTicket { room: self.clone() })
    }

    /// Clears the in-flight flag after a failed generation.
    pub fn abort_advance(&mut self) {
        self.generation_in_flight = false;
    }

    /// Applies a generated turn: archives if the ticket did, then either
    /// appends the turn or holds it for approval.
    pub fn finish_advance(&mut self, outcome: AdvanceOutcome) -> Result<(), RoomError> {
        if !self.generation_in_flight {
            return Err(RoomError::NoGenerationInFlight);
        }
        self.generation_in_flight = false;
        if let Some((count, summary)) = outcome.archived {
            self.archived_turn_count += count;
            self.archive_summary = Some(summary);
        }
        let controlled: BTreeSet<String> = outcome
            .turn
            .npc_blocks
            .iter()
            .filter_map(|b| {
                outcome
                    .control
                    .iter()
                    .find(|c| same_npc(c, &b.npc_id))
                    .cloned()
            })
            .collect();
        let text = serialize_turn(&Turn::Game(outcome.turn.clone())).to_lowercase();
        for id in outcome.control.difference(&controlled) {
            if text.contains(&id.trim().to_lowercase()) {
                self.notices.push(format!(
                    "{id} is mentioned in a game turn without an [ID] block; it was not held for approval"
                ));
            }
        }
        if controlled.is_empty() {
            self.transcript.push(Turn::Game(outcome.turn));
        } else {
            self.pending_turn = Some(PendingTurn {
                turn: outcome.turn,
                controlled_ids: controlled,
            });
        }
        Ok(())
    }

    /// Runs a whole advance against `provider`, leaving the room ready
    /// again on failure.
    pub fn advance_game_turn(&mut self, provider: &dyn Provider) -> Result<(), RoomError> {
        let ticket = self.begin_advance()?;
        match ticket.run(provider) {
            Ok(outcome) => self.finish_advance(outcome),
            Err(e) => {
                self.abort_advance();
                Err(e)
            }
        }
    }

    /// Approves the pending turn as edited. The turn joins the transcript
    /// exactly as an uncontrolled turn would.
    pub fn approve_pending_turn(
        &mut self,
        designer: &str,
        edited: GameTurn,
    ) -> Result<(), RoomError> {
        self.designer(designer)?;
        if self.pending_turn.is_none() {
            return Err(RoomError::NoPendingTurn);
        }
        if edited.is_empty() {
            return Err(RoomError::EmptyTurn);
        }
        self.pending_turn = None;
        self.transcript.push(Turn::Game(edited));
        Ok(())
    }

    /// Discards the pending turn and starts a new generation.
    pub fn begin_regenerate(&mut self, designer: &str) -> Result<AdvanceTicket, RoomError> {
        self.designer(designer)?;
        let pending = self.pending_turn.take().ok_or(RoomError::NoPendingTurn)?;
        match self.begin_advance() {
            Ok(ticket) => Ok(ticket),
            Err(e) => {
                self.pending_turn = Some(pending);
                Err(e)
            }
        }
    }

    pub fn resolve_pending_turn(
        &mut self,
        designer: &str,
        resolution: Resolution,
        provider: &dyn Provider,
    ) -> Result<(), RoomError> {
        match resolution {
            Resolution::Approve(turn) => self.approve_pending_turn(designer, turn),
            Resolution::Regenerate => {
                let ticket = self.begin_regenerate(designer)?;
                match ticket.run(provider) {
                    Ok(outcome) => self.finish_advance(outcome),
                    Err(e) => {
                        self.abort_advance();
                        Err(e)
                    }
                }
            }
        }
    }

    /// NPCs known from the transcript or the plot roster.
    pub fn known_npcs(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        let from_turns = extract_npcs(&self.transcript);
        for npc in self.plot.npc_roster.iter().chain(from_turns.iter()) {
            if !ids.iter().any(|i| same_npc(i, &npc.npc_id)) {
                ids.push(npc.npc_id.clone());
            }
        }
        ids
    }

    pub fn toggle_npc_control(&mut self, designer: &str, npc_id: &str) -> Result<(), RoomError> {
        self.designer(designer)?;
        let canonical = self
            .known_npcs()
            .into_iter()
            .find(|i| same_npc(i, npc_id))
            .ok_or_else(|| RoomError::UnknownNpc(npc_id.to_string()))?;
        if self.phase() != Phase::Ready {
            return Err(RoomError::ControlLocked);
        }
        let existing = self
            .npc_control
            .iter()
            .find(|c| same_npc(c, npc_id))
            .cloned();
        match existing {
            Some(c) => {
                self.npc_control.remove(&c);
            }
            None => {
                self.npc_control.insert(canonical);
            }
        }
        Ok(())
    }

    pub fn is_controlled(&self, npc_id: &str) -> bool {
        self.npc_control.iter().any(|c| same_npc(c, npc_id))
    }

    /// Applies all edits in order, or none of them.
    pub fn edit_plot_events(
        &mut self,
        designer: &str,
        edits: &[PlotEdit],
    ) -> Result<(), RoomError> {
        self.designer(designer)?;
        let mut events = self.plot.key_events.clone();
        for edit in edits {
            let len = events.len();
            let check = |index: usize, events: &[KeyEvent]| -> Result<(), RoomError> {
                match events.get(index) {
                    None => Err(RoomError::IndexOutOfRange { index, len }),
                    Some(e) if e.played => Err(RoomError::EventAlreadyPlayed(index)),
                    Some(_) => Ok(()),
                }
            };
            match edit {
                PlotEdit::Replace { index, text } => {
                    check(*index, &events)?;
                    events[*index].text = text.clone();
                }
                PlotEdit::Delete { index } => {
                    check(*index, &events)?;
                    events.remove(*index);
                }
                PlotEdit::Insert { index, text } => {
                    if *index > len {
                        return Err(RoomError::IndexOutOfRange { index: *index, len });
                    }
                    events.insert(*index, KeyEvent::new(text.clone()));
                }
            }
        }
        self.plot.key_events = events;
        Ok(())
    }

    pub fn mark_event_played(&mut self, designer: &str, index: usize) -> Result<(), RoomError> {
        self.designer(designer)?;
        let len = self.plot.key_events.len();
        let event = self
            .plot
            .key_events
            .get_mut(index)
            .ok_or(RoomError::IndexOutOfRange { index, len })?;
        event.played = true;
        Ok(())
    }

    pub fn submit_feedback(
        &mut self,
        player: &str,
        turn_index: usize,
        label: &str,
        text: Option<String>,
    ) -> Result<(), RoomError> {
        if self.participant(player)?.role != Role::Player {
            return Err(RoomError::NotPlayer);
        }
        match self.transcript.get(turn_index) {
            Some(t) if t.kind() == TurnKind::Game => {}
            _ => return Err(RoomError::InvalidTurnRef(turn_index)),
        }
        if label != FREE_LABEL && !self.feedback_prompts.iter().any(|p| p == label) {
            return Err(RoomError::UnknownLabel(label.to_string()));
        }
        self.feedback_items.push(FeedbackItem {
            turn_index,
            author: player.to_string(),
            label: label.to_string(),
            text: text.filter(|t| !t.trim().is_empty()),
        });
        Ok(())
    }

    /// Out-of-band chat. Never enters the transcript or any prompt.
    pub fn chat(&mut self, participant: &str, text: &str) -> Result<(), RoomError> {
        self.participant(participant)?;
        let text = text.trim();
        let text = text
            .strip_prefix("/chat")
            .map(str::trim_start)
            .unwrap_or(text);
        if !text.is_empty() {
            self.chat_log.push(ChatMessage {
                author: participant.to_string(),
                text: text.to_string(),
            });
        }
        Ok(())
    }

    pub fn view_for(&self, participant: &str) -> Result<RoomView, RoomError> {
        let who = self.participant(participant)?.clone();
        let participants = self
            .participants
            .iter()
            .map(|p| ParticipantView {
                id: p.id.clone(),
                display_name: p.display_name.clone(),
                role: p.role,
            })
            .collect();
        match who.role {
            Role::Designer => Ok(RoomView {
                room_id: self.id.clone(),
                role: Role::Designer,
                participant_id: who.id,
                phase: self.phase(),
                opening_story: self.opening_story.clone(),
                transcript: self.transcript.clone(),
                feedback_prompts: self.feedback_prompts.clone(),
                feedback: self.feedback_items.clone(),
                participants,
                chat: self.chat_log.clone(),
                designer: Some(DesignerPane {
                    instructions: self.instructions.clone(),
                    plot: self.plot.clone(),
                    npcs: extract_npcs(&self.transcript),
                    npc_control: self.npc_control.iter().cloned().collect(),
                    pending_turn: self.pending_turn.clone(),
                    archive_summary: self.archive_summary.clone(),
                    archived_turn_count: self.archived_turn_count,
                    notices: self.notices.clone(),
                }),
            }),
            Role::Player => {
                let vis = VisibilityMap::default();
                let transcript = self
                    .transcript
                    .iter()
                    .map(|t| {
                        let mut t = redact_turn(t, Role::Player, &vis)
                            .expect("default visibility covers every tag");
                        if let Turn::Player(p) = &mut t {
                            p.author = None;
                        }
                        t
                    })
                    .collect();
                let phase = match self.phase() {
                    Phase::Ready => Phase::Ready,
                    _ => Phase::Generating,
                };
                Ok(RoomView {
                    room_id: self.id.clone(),
                    role: Role::Player,
                    participant_id: who.id.clone(),
                    phase,
                    opening_story: self.opening_story.clone(),
                    transcript,
                    feedback_prompts: self.feedback_prompts.clone(),
                    feedback: self
                        .feedback_items
                        .iter()
                        .filter(|f| f.author == who.id)
                        .cloned()
                        .collect(),
                    participants,
                    chat: self.chat_log.clone(),
                    designer: None,
                })
            }
        }
    }
}

/// Everything a generation needs, captured when it started.
#[derive(Clone, Debug)]
pub struct AdvanceTicket {
    room: Room,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdvanceOutcome {
    /// Number of live turns archived and the new summary.
    pub archived: Option<(usize, String)>,
    pub turn: GameTurn,
    pub control: BTreeSet<String>,
    pub request: CompletionRequest,
}

impl AdvanceTicket {
    pub fn run(self, provider: &dyn Provider) -> Result<AdvanceOutcome, RoomError> {
        let mut room = self.room;
        let mut archived = None;
        if let Some(count) = room.context_policy.turns_to_archive(room.live_turns()) {
            let segment = &room.live_turns()[..count];
            let summary = summarize_history(
                room.archive_summary.as_deref(),
                segment,
                &room.opening_story,
                &room.instructions,
                provider,
            )?;
            room.archived_turn_count += count;
            room.archive_summary = Some(summary.clone());
            archived = Some((count, summary));
        }
        let request = build_game_room_next_turn(&room);
        let completion = provider.complete(&request)?;
        if completion.trim().is_empty() {
            return Err(RoomError::EmptyCompletion);
        }
        let turn = parse_game_turn(&completion).ok_or(RoomError::ParseFailure)?;
        Ok(AdvanceOutcome {
            archived,
            turn,
            control: room.npc_control,
            request,
        })
    }
}

fn parse_game_turn(completion: &str) -> Option<GameTurn> {
    let text = format!(
        "{}\n{}",
        TurnKind::Game.header(),
        completion.trim_start_matches(['\n', '\r'])
    );
    let parsed = parse_transcript(&text, false).ok()?;
    match parsed.turns.into_iter().next()? {
        Turn::Game(g) if !g.is_empty() => Some(g),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub id: String,
    pub display_name: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignerPane {
    pub instructions: String,
    pub plot: Plot,
    pub npcs: Vec<NpcSnapshot>,
    pub npc_control: Vec<String>,
    pub pending_turn: Option<PendingTurn>,
    pub archive_summary: Option<String>,
    pub archived_turn_count: usize,
    pub notices: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomView {
    pub room_id: String,
    pub role: Role,
    pub participant_id: String,
    pub phase: Phase,
    pub opening_story: String,
    pub transcript: Vec<Turn>,
    pub feedback_prompts: Vec<String>,
    pub feedback: Vec<FeedbackItem>,
    pub participants: Vec<ParticipantView>,
    pub chat: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designer: Option<DesignerPane>,
}

impl RoomView {
    pub fn transcript_text(&self) -> String {
        serialize_transcript(&self.transcript)
    }
}

/// On-disk form of a room. The transcript and pending turn are stored as
/// canonical text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomSnapshot {
    pub id: String,
    pub opening_story: String,
    pub instructions: String,
    pub plot: Plot,
    pub transcript: String,
    /// Author of each player turn, in order.
    pub authors: Vec<Option<String>>,
    pub archived_turn_count: usize,
    pub archive_summary: Option<String>,
    pub participants: Vec<Participant>,
    pub npc_control: BTreeSet<String>,
    pub pending_turn: Option<String>,
    pub pending_controlled_ids: BTreeSet<String>,
    pub feedback_prompts: Vec<String>,
    pub feedback_items: Vec<FeedbackItem>,
    pub chat_log: Vec<ChatMessage>,
    pub notices: Vec<String>,
    pub round_robin: bool,
    pub context_policy: ContextPolicy,
    pub next_participant: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoomCodecError {
    #[error("room snapshot is not valid JSON: {0}")]
    Json(String),
    #[error("room snapshot is inconsistent: {0}")]
    Inconsistent(String),
}

impl Room {
    /// Snapshots never record an in-flight generation.
    pub fn to_snapshot(&self) -> RoomSnapshot {
        RoomSnapshot {
            id: self.id.clone(),
            opening_story: self.opening_story.clone(),
            instructions: self.instructions.clone(),
            plot: self.plot.clone(),
            transcript: serialize_transcript(&self.transcript),
            authors: self
                .transcript
                .iter()
                .filter_map(|t| t.as_player().map(|p| p.author.clone()))
                .collect(),
            archived_turn_count: self.archived_turn_count,
            archive_summary: self.archive_summary.clone(),
            participants: self.participants.clone(),
            npc_control: self.npc_control.clone(),
            pending_turn: self
                .pending_turn
                .as_ref()
                .map(|p| serialize_turn(&Turn::Game(p.turn.clone()))),
            pending_controlled_ids: self
                .pending_turn
                .as_ref()
                .map(|p| p.controlled_ids.clone())
                .unwrap_or_default(),
            feedback_prompts: self.feedback_prompts.clone(),
            feedback_items: self.feedback_items.clone(),
            chat_log: self.chat_log.clone(),
            notices: self.notices.clone(),
            round_robin: self.round_robin,
            context_policy: self.context_policy,
            next_participant: self.next_participant,
        }
    }

    pub fn from_snapshot(s: RoomSnapshot) -> Result<Room, RoomCodecError> {
        let bad = |m: String| RoomCodecError::Inconsistent(m);
        let mut transcript = parse_transcript(&s.transcript, false)
            .expect("lenient parsing does not fail")
            .turns;
        let mut authors = s.authors.into_iter();
        for turn in &mut transcript {
            if let Turn::Player(p) = turn {
                p.author = authors
                    .next()
                    .ok_or_else(|| bad("fewer authors than player turns".into()))?;
            }
        }
        if authors.next().is_some() {
            return Err(bad("more authors than player turns".into()));
        }
        if s.archived_turn_count > transcript.len() {
            return Err(bad("archived turn count exceeds the transcript".into()));
        }
        let pending_turn = match s.pending_turn {
            None => None,
            Some(text) => {
                let turn = match parse_transcript(&text, false)
                    .expect("lenient parsing does not fail")
                    .turns
                    .pop()
                {
                    Some(Turn::Game(g)) => g,
                    _ => return Err(bad("pending turn is not a game turn".into())),
                };
                Some(PendingTurn {
                    turn,
                    controlled_ids: s.pending_controlled_ids,
                })
            }
        };
        Ok(Room {
            id: s.id,
            opening_story: s.opening_story,
            instructions: s.instructions,
            plot: s.plot,
            transcript,
            archived_turn_count: s.archived_turn_count,
            archive_summary: s.archive_summary,
            participants: s.participants,
            npc_control: s.npc_control,
            pending_turn,
            feedback_prompts: s.feedback_prompts,
            feedback_items: s.feedback_items,
            chat_log: s.chat_log,
            notices: s.notices,
            generation_in_flight: false,
            round_robin: s.round_robin,
            context_policy: s.context_policy,
            next_participant: s.next_participant,
        })
    }

    /// The `.room` file text.
    pub fn to_room_file(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn parse_room_file(text: &str) -> Result<Room, RoomCodecError> {
        let snapshot: RoomSnapshot =
            serde_json::from_str(text).map_err(|e| RoomCodecError::Json(e.to_string()))?;
        Room::from_snapshot(snapshot)
    }
}
