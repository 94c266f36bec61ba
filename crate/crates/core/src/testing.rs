//! Generators and brute-force oracles shared by the test suites.
//!
//! The oracles work on raw text line by line and never call the parser, so
//! they can check it.

use indexmap::IndexMap;
use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;

use crate::plot::{parse_plot, KeyEvent, NpcSnapshot, Plot};
use crate::prompt::{
    build_design_next_turn, build_game_room_next_turn, build_plot_prompt, build_summary_prompt,
    CompletionRequest,
};
use crate::provider::ScriptedProvider;
use crate::room::Room;
use crate::story::{ContextPolicy, Edit, StoryDocument};
use crate::turn_format::{serialize_turn, Role};
use crate::turn_format::{GameTurn, NpcBlock, PlayerTurn, Tag, TagEntry, Turn, TurnKind};

pub const NPC_NAMES: [&str; 5] = ["Neighbor", "Guard", "Agent Smith", "Dr Vega", "Courier"];

/// One line of prose: no colons, no leading bracket, no edge whitespace.
pub fn arb_line() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 ,.!?'\"-]{0,30}[A-Za-z0-9.!?\"]"
}

/// One to three lines joined by newlines.
pub fn arb_value() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => arb_line(),
        1 => vec(arb_line(), 2..=3).prop_map(|l| l.join("\n")),
    ]
}

pub fn arb_npc_tag() -> impl Strategy<Value = Tag> {
    prop_oneof![
        8 => prop::sample::select(vec![
            Tag::BACKSTORY,
            Tag::PERSONA,
            Tag::MOOD,
            Tag::THOUGHT,
            Tag::ACTION,
            Tag::WORDS,
            Tag::FACIAL_EXPRESSION,
            Tag::VOICE_EMOTION,
        ]),
        1 => "[A-Z][a-z]{2,8}".prop_map(|n| Tag::new(&n).unwrap()),
    ]
}

pub fn arb_npc_id() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::sample::select(NPC_NAMES.to_vec()).prop_map(str::to_string),
        1 => "[A-Z][a-z]{2,8}",
    ]
}

fn dedup_entries(entries: Vec<(Tag, String)>) -> Vec<TagEntry> {
    let mut out: Vec<TagEntry> = Vec::new();
    for (tag, value) in entries {
        if !out.iter().any(|e| e.tag == tag) {
            out.push(TagEntry::new(tag, value));
        }
    }
    out
}

pub fn arb_block_with(ids: BoxedStrategy<String>) -> impl Strategy<Value = NpcBlock> {
    (ids, vec((arb_npc_tag(), arb_value()), 0..6)).prop_map(|(npc_id, entries)| NpcBlock {
        npc_id,
        entries: dedup_entries(entries),
    })
}

pub fn arb_block() -> impl Strategy<Value = NpcBlock> {
    arb_block_with(arb_npc_id().boxed())
}

/// A non-empty game turn.
pub fn arb_game_turn() -> impl Strategy<Value = GameTurn> {
    arb_game_turn_with(arb_npc_id().boxed())
}

pub fn arb_game_turn_with(ids: BoxedStrategy<String>) -> impl Strategy<Value = GameTurn> {
    (option::of(arb_value()), vec(arb_block_with(ids), 0..4))
        .prop_filter("empty game turn", |(s, b)| s.is_some() || !b.is_empty())
        .prop_map(|(scene, npc_blocks)| GameTurn {
            scene,
            npc_blocks,
            freeform: Vec::new(),
        })
}

/// A non-empty player turn using only `[Action]` and `[Words]`.
pub fn arb_player_turn() -> impl Strategy<Value = PlayerTurn> {
    (option::of(arb_value()), option::of(arb_value()))
        .prop_filter("empty player turn", |(a, w)| a.is_some() || w.is_some())
        .prop_map(|(a, w)| PlayerTurn::new(a.as_deref(), w.as_deref()))
}

pub fn arb_turn() -> impl Strategy<Value = Turn> {
    prop_oneof![
        arb_game_turn().prop_map(Turn::Game),
        arb_player_turn().prop_map(Turn::Player),
    ]
}

pub fn arb_transcript(max: usize) -> impl Strategy<Value = Vec<Turn>> {
    vec(arb_turn(), 0..=max)
}

pub fn arb_plot() -> impl Strategy<Value = Plot> {
    let roster = vec(
        (arb_npc_id(), vec((arb_npc_tag(), arb_value()), 0..4)),
        0..4,
    )
    .prop_map(|npcs| {
        let mut out: Vec<NpcSnapshot> = Vec::new();
        for (id, entries) in npcs {
            if out.iter().any(|n| n.npc_id.eq_ignore_ascii_case(&id)) {
                continue;
            }
            let mut latest = IndexMap::new();
            for e in dedup_entries(entries) {
                latest.insert(e.tag, e.value);
            }
            out.push(NpcSnapshot { npc_id: id, latest });
        }
        out
    });
    (arb_line(), arb_value(), vec(arb_value(), 1..6), roster).prop_map(
        |(title, summary, events, npc_roster)| Plot {
            title,
            summary,
            key_events: events.into_iter().map(KeyEvent::new).collect(),
            npc_roster,
        },
    )
}

fn bracket_tag(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    Some((&rest[..close], rest[close + 1..].trim()))
}

fn is_header(line: &str) -> bool {
    let l = line.trim_start().to_ascii_lowercase();
    l.starts_with("game:") || l.starts_with("player:")
}

fn norm(id: &str) -> String {
    id.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Every `[ID]` name appearing in `text`, trailing colon removed.
pub fn scan_npc_ids(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(bracket_tag)
        .filter(|(tag, _)| tag.trim().eq_ignore_ascii_case("id"))
        .map(|(_, v)| v.trim_end_matches(':').trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

/// True when any `[ID]` line in `text` names a member of `control`.
pub fn scan_controls(text: &str, control: &[String]) -> bool {
    scan_npc_ids(text)
        .iter()
        .any(|id| control.iter().any(|c| norm(c) == norm(id)))
}

/// Roster rebuilt from serialized transcript text: NPCs in first-seen order
/// with the last value written for every tag.
pub fn scan_roster(text: &str) -> Vec<(String, Vec<(String, String)>)> {
    let mut roster: Vec<(String, Vec<(String, String)>)> = Vec::new();
    let mut npc: Option<usize> = None;
    // (npc, tag position) receiving continuation lines
    let mut open: Option<(usize, usize)> = None;
    for line in text.lines() {
        if is_header(line) || line.to_ascii_lowercase().starts_with("scene:") {
            npc = None;
            open = None;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match bracket_tag(line) {
            Some((tag, value)) if tag.eq_ignore_ascii_case("id") => {
                let id = value.trim_end_matches(':').trim().to_string();
                let i = match roster.iter().position(|(n, _)| norm(n) == norm(&id)) {
                    Some(i) => i,
                    None => {
                        roster.push((id, Vec::new()));
                        roster.len() - 1
                    }
                };
                npc = Some(i);
                open = None;
            }
            Some((tag, value)) => {
                open = None;
                if let Some(i) = npc {
                    let tags = &mut roster[i].1;
                    let key = norm(tag);
                    let pos = match tags.iter().position(|(t, _)| norm(t) == key) {
                        Some(p) => {
                            tags[p].1 = value.to_string();
                            p
                        }
                        None => {
                            tags.push((tag.to_string(), value.to_string()));
                            tags.len() - 1
                        }
                    };
                    open = Some((i, pos));
                }
            }
            None => {
                if let Some((i, p)) = open {
                    let v = &mut roster[i].1[p].1;
                    v.push('\n');
                    v.push_str(line.trim_end());
                }
            }
        }
    }
    roster
}

pub const TEMPLATE_STORY: &str = include_str!("../fixtures/corpus/template.story");
pub const SAMPLE_PLOT: &str = include_str!("../fixtures/shadows_of_betrayal.plot");

pub fn template_story() -> StoryDocument {
    StoryDocument::parse_story_file(TEMPLATE_STORY).expect("template story parses")
}

pub fn sample_plot() -> Plot {
    parse_plot(SAMPLE_PLOT).expect("sample plot parses")
}

const EARLIER_SUMMARY: &str = "In this story, the player hears a knock while sitting in their living room and opens the door to greet whoever is outside.";

const PARTIAL_NEIGHBOR_TURN: &str = "Scene: The neighbor looks at you with a pleading expression. She seems to be on the verge of tears.
[ID] Neighbor:
[Backstory] She was forced to do terrible things during her time as a spy and is now trying to make amends by helping others.
[Persona] Brave, but also vulnerable.
[Mood] Desperate and scared.
[Thought]";

/// The template room after one more player turn.
pub fn sample_room() -> Room {
    let doc = template_story();
    let mut room = Room::create(
        "shadows",
        sample_plot(),
        doc.opening_story(),
        doc.instructions(),
        vec!["doesn't align with the NPC character".to_string()],
    )
    .expect("sample plot is valid");
    room.transcript = doc.live_turns().to_vec();
    room.transcript.push(Turn::Player(PlayerTurn::new(
        Some("Grabs a jacket and follows her into the hallway."),
        Some("Fine. But you explain everything once we are safe."),
    )));
    room
}

/// Fixture name and request for every golden prompt.
pub fn golden_requests() -> Vec<(&'static str, CompletionRequest)> {
    let doc = template_story();
    let turns = doc.live_turns().to_vec();

    let summarizer = ScriptedProvider::from_responses([EARLIER_SUMMARY]);
    let archived = doc
        .apply_edit(Edit::TruncateAfter(3))
        .expect("template has four turns")
        .maybe_archive(
            &summarizer,
            &ContextPolicy {
                max_chars: 0,
                keep_last: 2,
            },
        )
        .expect("scripted summary");

    vec![
        (
            "design_next_turn_partial",
            build_design_next_turn(&archived, TurnKind::Game, Some(PARTIAL_NEIGHBOR_TURN)),
        ),
        (
            "design_next_turn_player",
            build_design_next_turn(&doc, TurnKind::Player, None),
        ),
        (
            "summary",
            build_summary_prompt(
                Some(EARLIER_SUMMARY),
                &turns[2..],
                doc.opening_story(),
                doc.instructions(),
            ),
        ),
        ("plot", build_plot_prompt(Some(&sample_plot()), &turns)),
        (
            "game_room_next_turn",
            build_game_room_next_turn(&sample_room()),
        ),
    ]
}

/// An NPC name with its casing and spacing scrambled.
pub fn arb_known_npc_spelling() -> impl Strategy<Value = String> {
    (prop::sample::select(NPC_NAMES.to_vec()), 0..3u8).prop_map(|(name, style)| match style {
        0 => name.to_string(),
        1 => name.to_uppercase(),
        _ => format!(" {} ", name.to_lowercase()),
    })
}

/// A generated game turn as the model would write it after `Game:`.
pub fn completion_text(turn: &GameTurn) -> String {
    let text = serialize_turn(&Turn::Game(turn.clone()));
    text.split_once('\n')
        .map(|(_, rest)| rest.to_string())
        .unwrap_or_default()
}

#[derive(Clone, Debug)]
pub struct SessionRound {
    pub player: PlayerTurn,
    pub generated: GameTurn,
}

#[derive(Clone, Debug)]
pub struct SessionScript {
    pub control: Vec<String>,
    pub rounds: Vec<SessionRound>,
}

pub fn arb_session(max_rounds: usize) -> impl Strategy<Value = SessionScript> {
    let control = prop::sample::subsequence(NPC_NAMES.to_vec(), 0..=NPC_NAMES.len())
        .prop_map(|c| c.into_iter().map(str::to_string).collect());
    let round = (
        arb_player_turn(),
        arb_game_turn_with(arb_known_npc_spelling().boxed()),
    )
        .prop_map(|(player, generated)| SessionRound { player, generated });
    (control, vec(round, 1..=max_rounds))
        .prop_map(|(control, rounds)| SessionScript { control, rounds })
}

/// Plot whose roster names every generated NPC, so any can be controlled.
pub fn roster_plot() -> Plot {
    let mut plot = sample_plot();
    plot.npc_roster = NPC_NAMES.iter().map(|n| NpcSnapshot::new(*n)).collect();
    plot
}

/// The designer's edit of an intercepted turn: every spoken line rewritten.
pub fn designer_edit(turn: &GameTurn, round: usize) -> GameTurn {
    let mut edited = turn.clone();
    for block in &mut edited.npc_blocks {
        for entry in &mut block.entries {
            if entry.tag == Tag::WORDS {
                entry.value = format!("Edited line {round} for {}.", block.npc_id.trim());
            }
        }
    }
    edited
}

pub struct SessionRun {
    pub room: Room,
    pub designer: String,
    pub player: String,
    /// Whether each round's generation was held for approval.
    pub intercepted: Vec<bool>,
}

fn session_room() -> (Room, String, String) {
    let mut room = Room::create(
        "session",
        roster_plot(),
        "A quiet street.",
        "Continue the game.",
        vec!["too slow".to_string()],
    )
    .expect("roster plot is valid");
    let designer = room.join("Designer", Role::Designer);
    let player = room.join("Player", Role::Player);
    (room, designer, player)
}

/// Plays the script with the control set active; the designer approves
/// every intercepted turn after [`designer_edit`].
pub fn run_woz_session(script: &SessionScript) -> SessionRun {
    let (mut room, designer, player) = session_room();
    for id in &script.control {
        room.toggle_npc_control(&designer, id).expect("known npc");
    }
    let mut intercepted = Vec::new();
    for (i, round) in script.rounds.iter().enumerate() {
        room.submit_player_turn(&player, round.player.clone())
            .expect("ready");
        let provider = ScriptedProvider::from_responses([completion_text(&round.generated)]);
        room.advance_game_turn(&provider)
            .expect("scripted completion");
        let pending = room.pending_turn.clone();
        intercepted.push(pending.is_some());
        if let Some(p) = pending {
            room.approve_pending_turn(&designer, designer_edit(&p.turn, i))
                .expect("designer approves");
        }
    }
    SessionRun {
        room,
        designer,
        player,
        intercepted,
    }
}

/// Plays the same player turns with no control set, the model producing
/// exactly the game turns that ended up in `woz`.
pub fn run_plain_session(script: &SessionScript, woz: &Room) -> SessionRun {
    let (mut room, designer, player) = session_room();
    let finals: Vec<GameTurn> = woz
        .transcript
        .iter()
        .filter_map(|t| t.as_game().cloned())
        .collect();
    for (round, final_turn) in script.rounds.iter().zip(finals) {
        room.submit_player_turn(&player, round.player.clone())
            .expect("ready");
        let provider = ScriptedProvider::from_responses([completion_text(&final_turn)]);
        room.advance_game_turn(&provider)
            .expect("scripted completion");
    }
    let intercepted = vec![false; script.rounds.len()];
    SessionRun {
        room,
        designer,
        player,
        intercepted,
    }
}
