//! Assembly of the four completion requests the engine issues.
//!
//! Every builder is a pure function of its inputs and embeds transcripts and
//! plots only through their canonical serializers, so the same inputs always
//! produce byte-identical requests.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::plot::{serialize_plot, Plot};
use crate::room::Room;
use crate::story::StoryDocument;
use crate::turn_format::{header_kind, serialize_transcript, Turn, TurnKind};

pub const NEXT_TURN_MAX_TOKENS: u32 = 1000;
pub const SUMMARY_MAX_TOKENS: u32 = 2000;
pub const PLOT_MAX_TOKENS: u32 = 2000;

pub const SUMMARY_LABEL: &str = "Summary of what happened before:";

const SUMMARY_INSTRUCTION: &str =
    "Give me a detailed summary of what happened in the story from the beginning:";

const PLOT_INSTRUCTION: &str = "Given the game plot from previous segments and this segment of \
the game story, Give me a detailed plot of the game that can be used for future when other \
players play this game.Game plot must have the following sections: Title, Plot Summary, Key \
events in order.\ngenerate game plot grounded to the given story:";

/// Stop sequences for every next-turn request.
pub fn turn_stop_sequences() -> Vec<String> {
    vec!["Player:".to_string(), "Game:".to_string()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemperaturePolicy {
    #[default]
    ProviderDefault,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_message: Option<String>,
    pub user_messages: Vec<String>,
    pub stop_sequences: Vec<String>,
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature_policy: TemperaturePolicy,
}

impl CompletionRequest {
    /// All message text, system first. Used for script matching.
    pub fn full_text(&self) -> String {
        self.system_message
            .iter()
            .chain(self.user_messages.iter())
            .cloned()
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Plain-text rendering used by the golden fixtures.
impl fmt::Display for CompletionRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(system) = &self.system_message {
            writeln!(f, "=== system ===")?;
            writeln!(f, "{system}")?;
        }
        for (i, user) in self.user_messages.iter().enumerate() {
            writeln!(f, "=== user {} ===", i + 1)?;
            writeln!(f, "{user}")?;
        }
        writeln!(f, "=== stop ===")?;
        for stop in &self.stop_sequences {
            writeln!(f, "{stop}")?;
        }
        writeln!(f, "=== max_tokens ===")?;
        writeln!(f, "{}", self.max_tokens)
    }
}

fn story_system_message(opening: &str, instructions: &str) -> String {
    format!("Opening story: {opening}\nInstructions: {instructions}")
}

/// The text the model should continue: the partial turn, or just its header.
pub fn completion_point(kind: TurnKind, partial: Option<&str>) -> String {
    match partial.map(str::trim_end) {
        None | Some("") => kind.header().to_string(),
        Some(p) => {
            let p = p.trim_start_matches(['\n', '\r']);
            let first = p.lines().next().unwrap_or_default();
            if header_kind(first).is_some() {
                p.to_string()
            } else {
                format!("{}\n{}", kind.header(), p)
            }
        }
    }
}

fn next_turn_user_message(summary: Option<&str>, turns: &[Turn], tail: String) -> String {
    let mut parts = Vec::new();
    if let Some(s) = summary {
        parts.push(format!("{SUMMARY_LABEL} {s}"));
    }
    if !turns.is_empty() {
        parts.push(serialize_transcript(turns));
    }
    parts.push(tail);
    parts.join("\n\n")
}

/// Design-room request for the next turn of `kind`, optionally continuing
/// a partially written turn.
pub fn build_design_next_turn(
    doc: &StoryDocument,
    kind: TurnKind,
    partial: Option<&str>,
) -> CompletionRequest {
    CompletionRequest {
        system_message: Some(story_system_message(
            doc.opening_story(),
            doc.instructions(),
        )),
        user_messages: vec![next_turn_user_message(
            doc.archive_summary(),
            doc.live_turns(),
            completion_point(kind, partial),
        )],
        stop_sequences: turn_stop_sequences(),
        max_tokens: NEXT_TURN_MAX_TOKENS,
        temperature_policy: TemperaturePolicy::ProviderDefault,
    }
}

/// Game-room request for the next game turn.
pub fn build_game_room_next_turn(room: &Room) -> CompletionRequest {
    let system = format!(
        "{}\nUse the following plot to guide the game:\n{}",
        story_system_message(&room.opening_story, &room.instructions),
        serialize_plot(&room.plot)
    );
    CompletionRequest {
        system_message: Some(system),
        user_messages: vec![next_turn_user_message(
            room.archive_summary.as_deref(),
            room.live_turns(),
            TurnKind::Game.header().to_string(),
        )],
        stop_sequences: turn_stop_sequences(),
        max_tokens: NEXT_TURN_MAX_TOKENS,
        temperature_policy: TemperaturePolicy::ProviderDefault,
    }
}

/// Request that folds a new story segment into the running summary.
pub fn build_summary_prompt(
    prev_summary: Option<&str>,
    segment: &[Turn],
    opening: &str,
    instructions: &str,
) -> CompletionRequest {
    let mut lines = vec![
        "<story>".to_string(),
        format!("Opening story: {opening}"),
        format!("Instructions: {instructions}"),
    ];
    if let Some(prev) = prev_summary {
        lines.push(format!("{SUMMARY_LABEL} {prev}"));
    }
    lines.push("What happened next:".to_string());
    lines.push(serialize_transcript(segment));
    lines.push("</story>".to_string());
    lines.push(SUMMARY_INSTRUCTION.to_string());
    CompletionRequest {
        system_message: None,
        user_messages: vec![lines.join("\n")],
        stop_sequences: Vec::new(),
        max_tokens: SUMMARY_MAX_TOKENS,
        temperature_policy: TemperaturePolicy::ProviderDefault,
    }
}

/// Request that distills a segment (merged with any prior plot) into a plot.
pub fn build_plot_prompt(prior_plot: Option<&Plot>, segment: &[Turn]) -> CompletionRequest {
    let mut user_messages = Vec::with_capacity(3);
    if let Some(prior) = prior_plot {
        user_messages.push(format!(
            "Game plot from previous segments:\n{}",
            serialize_plot(prior)
        ));
    }
    user_messages.push(serialize_transcript(segment));
    user_messages.push(PLOT_INSTRUCTION.to_string());
    CompletionRequest {
        system_message: None,
        user_messages,
        stop_sequences: Vec::new(),
        max_tokens: PLOT_MAX_TOKENS,
        temperature_policy: TemperaturePolicy::ProviderDefault,
    }
}
