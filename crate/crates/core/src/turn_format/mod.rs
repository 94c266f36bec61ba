//! Tag-structured transcript grammar.
//!
//! A transcript is a sequence of turns, each introduced by a `Game:` or
//! `Player:` header line. Game turns carry an optional `Scene:` line and
//! any number of NPC blocks (`[ID] Name:` followed by `[Tag] value` lines).
//! Player turns carry tag entries directly, normally `[Action]` and `[Words]`.
//!
//! The canonical form written by [`serialize_turn`] is what every prompt and
//! every file embeds, so parsing it back must reproduce the same turns.

pub(crate) mod parse;
mod redact;
mod validate;

use std::borrow::Cow;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use parse::{parse_transcript, ParseError, ParsedTranscript};
pub use redact::{redact_turn, RedactError, Role, Visibility, VisibilityMap};
pub use validate::validate_turn;

/// Tags known to the engine, in canonical casing.
pub const BUILTIN_TAGS: [&str; 9] = [
    "ID",
    "Action",
    "Words",
    "Backstory",
    "Persona",
    "Mood",
    "Thought",
    "Facial Expression",
    "Voice Emotion",
];

/// A tag name such as `Mood`, compared case-insensitively.
///
/// Built-in tags are stored in their canonical casing; custom tags keep the
/// casing they were first written with.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tag(Cow<'static, str>);

impl Tag {
    pub const ID: Tag = Tag(Cow::Borrowed("ID"));
    pub const ACTION: Tag = Tag(Cow::Borrowed("Action"));
    pub const WORDS: Tag = Tag(Cow::Borrowed("Words"));
    pub const BACKSTORY: Tag = Tag(Cow::Borrowed("Backstory"));
    pub const PERSONA: Tag = Tag(Cow::Borrowed("Persona"));
    pub const MOOD: Tag = Tag(Cow::Borrowed("Mood"));
    pub const THOUGHT: Tag = Tag(Cow::Borrowed("Thought"));
    pub const FACIAL_EXPRESSION: Tag = Tag(Cow::Borrowed("Facial Expression"));
    pub const VOICE_EMOTION: Tag = Tag(Cow::Borrowed("Voice Emotion"));

    /// Builds a tag from its bare name (without brackets).
    ///
    /// Returns `None` when the trimmed name is empty or contains a bracket.
    pub fn new(name: &str) -> Option<Tag> {
        let name = name.trim();
        if name.is_empty() || name.contains(['[', ']', '\n']) {
            return None;
        }
        let key = normalize_key(name);
        let builtin = BUILTIN_TAGS
            .iter()
            .find(|b| normalize_key(b) == key)
            .copied();
        Some(match builtin {
            Some(b) => Tag(Cow::Borrowed(b)),
            None => Tag(Cow::Owned(name.to_string())),
        })
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    /// `[Name]`
    pub fn bracketed(&self) -> String {
        format!("[{}]", self.0)
    }

    pub fn is_builtin(&self) -> bool {
        BUILTIN_TAGS.iter().any(|b| *b == self.0)
    }

    pub(crate) fn key(&self) -> String {
        normalize_key(&self.0)
    }
}

fn normalize_key(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl TryFrom<String> for Tag {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Tag::new(&value).ok_or_else(|| format!("invalid tag name {value:?}"))
    }
}

impl From<Tag> for String {
    fn from(tag: Tag) -> String {
        tag.0.into_owned()
    }
}

impl PartialEq for Tag {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Tag {}

impl Hash for Tag {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: Tag,
    pub value: String,
}

impl TagEntry {
    pub fn new(tag: Tag, value: impl Into<String>) -> Self {
        Self {
            tag,
            value: value.into(),
        }
    }
}

/// One NPC's section of a game turn, keyed by the `[ID]` line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcBlock {
    pub npc_id: String,
    pub entries: Vec<TagEntry>,
}

impl NpcBlock {
    pub fn new(npc_id: impl Into<String>) -> Self {
        Self {
            npc_id: npc_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, tag: Tag, value: impl Into<String>) -> Self {
        self.entries.push(TagEntry::new(tag, value));
        self
    }

    pub fn get(&self, tag: &Tag) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| &e.tag == tag)
            .map(|e| e.value.as_str())
    }

    /// Case-insensitive, whitespace-trimmed id comparison.
    pub fn is_npc(&self, npc_id: &str) -> bool {
        same_npc(&self.npc_id, npc_id)
    }
}

pub fn same_npc(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameTurn {
    pub scene: Option<String>,
    pub npc_blocks: Vec<NpcBlock>,
    /// Lines the parser could not attribute to a field, kept verbatim.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeform: Vec<String>,
}

impl GameTurn {
    pub fn is_empty(&self) -> bool {
        self.scene.is_none() && self.npc_blocks.is_empty() && self.freeform.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerTurn {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    pub entries: Vec<TagEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeform: Vec<String>,
}

impl PlayerTurn {
    pub fn new(action: Option<&str>, words: Option<&str>) -> Self {
        let mut entries = Vec::new();
        if let Some(a) = action {
            entries.push(TagEntry::new(Tag::ACTION, a));
        }
        if let Some(w) = words {
            entries.push(TagEntry::new(Tag::WORDS, w));
        }
        Self {
            author: None,
            entries,
            freeform: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.freeform.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Game,
    Player,
}

impl TurnKind {
    pub fn header(self) -> &'static str {
        match self {
            TurnKind::Game => "Game:",
            TurnKind::Player => "Player:",
        }
    }

    pub fn other(self) -> TurnKind {
        match self {
            TurnKind::Game => TurnKind::Player,
            TurnKind::Player => TurnKind::Game,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Turn {
    Game(GameTurn),
    Player(PlayerTurn),
}

impl Turn {
    pub fn kind(&self) -> TurnKind {
        match self {
            Turn::Game(_) => TurnKind::Game,
            Turn::Player(_) => TurnKind::Player,
        }
    }

    /// Character count of the canonical serialization.
    pub fn raw_char_len(&self) -> usize {
        serialize_turn(self).chars().count()
    }

    pub fn as_game(&self) -> Option<&GameTurn> {
        match self {
            Turn::Game(g) => Some(g),
            Turn::Player(_) => None,
        }
    }

    pub fn as_player(&self) -> Option<&PlayerTurn> {
        match self {
            Turn::Player(p) => Some(p),
            Turn::Game(_) => None,
        }
    }

    pub fn npc_blocks(&self) -> &[NpcBlock] {
        match self {
            Turn::Game(g) => &g.npc_blocks,
            Turn::Player(_) => &[],
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Turn::Game(g) => g.is_empty(),
            Turn::Player(p) => p.is_empty(),
        }
    }
}

impl From<GameTurn> for Turn {
    fn from(g: GameTurn) -> Self {
        Turn::Game(g)
    }
}

impl From<PlayerTurn> for Turn {
    fn from(p: PlayerTurn) -> Self {
        Turn::Player(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    /// A tag line with no value and nothing continuing it.
    UnterminatedTag,
    DuplicateTagInBlock,
    /// Content before the first turn header.
    OrphanContent,
    EmptyNpcId,
    /// A player turn using a tag other than `[Action]` / `[Words]`.
    PlayerTagViolation,
    /// A `Scene:` line that cannot be attached to the turn's scene.
    UnexpectedScene,
    /// A tag line in a game turn that precedes every `[ID]` block.
    TagOutsideBlock,
    /// A line starting with `[` that is not a well-formed tag.
    MalformedTag,
    /// Plain text with no preceding value to continue.
    StrayLine,
}

/// A problem found while parsing or validating.
///
/// `lines` is an inclusive 1-based range into the parsed text (or into the
/// canonical serialization for [`validate_turn`]).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
    pub lines: (usize, usize),
    pub message: String,
}

impl Diagnostic {
    pub(crate) fn new(
        severity: Severity,
        kind: DiagnosticKind,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Self {
            severity,
            kind,
            lines: (line, line),
            message: message.into(),
        }
    }
}

fn push_entry(lines: &mut Vec<String>, entry: &TagEntry) {
    if entry.value.is_empty() {
        lines.push(entry.tag.bracketed());
    } else {
        lines.push(format!("{} {}", entry.tag, entry.value));
    }
}

/// Canonical text of one turn, without a trailing newline.
pub fn serialize_turn(turn: &Turn) -> String {
    let mut lines = vec![turn.kind().header().to_string()];
    match turn {
        Turn::Game(g) => {
            lines.extend(g.freeform.iter().cloned());
            if let Some(scene) = &g.scene {
                if scene.is_empty() {
                    lines.push("Scene:".to_string());
                } else {
                    lines.push(format!("Scene: {scene}"));
                }
            }
            for block in &g.npc_blocks {
                lines.push(format!("[ID] {}:", block.npc_id));
                for entry in &block.entries {
                    push_entry(&mut lines, entry);
                }
            }
        }
        Turn::Player(p) => {
            lines.extend(p.freeform.iter().cloned());
            for entry in &p.entries {
                push_entry(&mut lines, entry);
            }
        }
    }
    lines.join("\n")
}

/// The turn kind introduced by `line`, if it is a `Game:` / `Player:` header.
pub fn header_kind(line: &str) -> Option<TurnKind> {
    match parse::classify(line) {
        parse::LineClass::Header(kind, _) => Some(kind),
        _ => None,
    }
}

/// Turns joined by a blank line.
pub fn serialize_transcript(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(serialize_turn)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// A transcript plus the optional bare header that marks whose turn is next.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<Turn>,
    pub next_speaker: Option<TurnKind>,
}

impl Transcript {
    pub fn to_text(&self) -> String {
        let mut text = serialize_transcript(&self.turns);
        if let Some(kind) = self.next_speaker {
            if !text.is_empty() {
                text.push_str("\n\n");
            }
            text.push_str(kind.header());
        }
        text
    }
}
