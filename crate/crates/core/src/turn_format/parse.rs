use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Diagnostic, DiagnosticKind, GameTurn, NpcBlock, PlayerTurn, Severity, Tag, TagEntry,
    Transcript, Turn, TurnKind,
};

/// Output of [`parse_transcript`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTranscript {
    pub turns: Vec<Turn>,
    /// Set when the text ends in a bare header with nothing under it.
    pub next_speaker: Option<TurnKind>,
    /// Non-blank lines found before the first header.
    pub preamble: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedTranscript {
    pub fn into_transcript(self) -> Transcript {
        Transcript {
            turns: self.turns,
            next_speaker: self.next_speaker,
        }
    }

    pub fn has_errors(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.severity == Severity::Error)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    UnterminatedTag { line: usize, message: String },
    #[error("line {line}: {message}")]
    DuplicateTagInBlock { line: usize, message: String },
    #[error("line {line}: content before the first turn header")]
    OrphanContent { line: usize },
    #[error("line {line}: {message}")]
    Invalid {
        line: usize,
        kind: DiagnosticKind,
        message: String,
    },
}

impl ParseError {
    fn from_diagnostic(d: &Diagnostic) -> Self {
        let line = d.lines.0;
        let message = d.message.clone();
        match d.kind {
            DiagnosticKind::UnterminatedTag => ParseError::UnterminatedTag { line, message },
            DiagnosticKind::DuplicateTagInBlock => {
                ParseError::DuplicateTagInBlock { line, message }
            }
            DiagnosticKind::OrphanContent => ParseError::OrphanContent { line },
            kind => ParseError::Invalid {
                line,
                kind,
                message,
            },
        }
    }
}

/// Parses transcript text into turns.
///
/// Lenient mode (`strict == false`) never fails: lines that cannot be
/// attributed to a field are kept as freeform text on the enclosing turn
/// (or in the preamble) and reported as diagnostics. Strict mode fails on
/// the first diagnostic of severity [`Severity::Error`].
pub fn parse_transcript(text: &str, strict: bool) -> Result<ParsedTranscript, ParseError> {
    let mut parser = Parser::new(strict);
    for (idx, raw) in text.split('\n').enumerate() {
        parser.line(idx + 1, raw.strip_suffix('\r').unwrap_or(raw));
    }
    let parsed = parser.finish();
    if strict {
        if let Some(d) = parsed
            .diagnostics
            .iter()
            .find(|d| d.severity == Severity::Error)
        {
            return Err(ParseError::from_diagnostic(d));
        }
    }
    Ok(parsed)
}

pub(crate) fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix)
        .then(|| &text[prefix.len()..])
}

pub(crate) enum LineClass<'a> {
    Blank,
    Header(TurnKind, &'a str),
    Scene(&'a str),
    Tag(Tag, &'a str),
    Malformed,
    Text,
}

pub(crate) fn classify(line: &str) -> LineClass<'_> {
    let t = line.trim();
    if t.is_empty() {
        return LineClass::Blank;
    }
    if let Some(rest) = strip_prefix_ci(t, "game:") {
        return LineClass::Header(TurnKind::Game, rest.trim());
    }
    if let Some(rest) = strip_prefix_ci(t, "player:") {
        return LineClass::Header(TurnKind::Player, rest.trim());
    }
    if let Some(rest) = strip_prefix_ci(t, "scene:") {
        return LineClass::Scene(rest.trim());
    }
    if let Some(inner) = t.strip_prefix('[') {
        return match inner.split_once(']') {
            Some((name, value)) => match Tag::new(name) {
                Some(tag) => LineClass::Tag(tag, value.trim()),
                None => LineClass::Malformed,
            },
            None => LineClass::Malformed,
        };
    }
    LineClass::Text
}

/// `Neighbor:` -> `Neighbor`
pub(crate) fn npc_id_from_value(value: &str) -> String {
    value.trim().trim_end_matches(':').trim().to_string()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sink {
    None,
    Preamble,
    Scene,
    BlockEntry(usize, usize),
    PlayerEntry(usize),
    Freeform(usize),
    IdHeader,
}

struct Builder {
    kind: TurnKind,
    game: GameTurn,
    player: PlayerTurn,
}

impl Builder {
    fn new(kind: TurnKind) -> Self {
        Self {
            kind,
            game: GameTurn::default(),
            player: PlayerTurn::default(),
        }
    }

    fn freeform_mut(&mut self) -> &mut Vec<String> {
        match self.kind {
            TurnKind::Game => &mut self.game.freeform,
            TurnKind::Player => &mut self.player.freeform,
        }
    }

    fn build(self) -> Turn {
        fn trim_entries(entries: &mut [TagEntry]) {
            for e in entries {
                e.value = e.value.trim().to_string();
            }
        }
        match self.kind {
            TurnKind::Game => {
                let mut g = self.game;
                if let Some(s) = g.scene.as_mut() {
                    *s = s.trim().to_string();
                }
                for b in &mut g.npc_blocks {
                    trim_entries(&mut b.entries);
                }
                Turn::Game(g)
            }
            TurnKind::Player => {
                let mut p = self.player;
                trim_entries(&mut p.entries);
                Turn::Player(p)
            }
        }
    }
}

struct Parser {
    strict: bool,
    turns: Vec<Turn>,
    current: Option<Builder>,
    sink: Sink,
    blanks: usize,
    /// Line of a tag entry that still has no value.
    open_empty: Option<usize>,
    preamble: Vec<String>,
    preamble_lines: Option<(usize, usize)>,
    diagnostics: Vec<Diagnostic>,
}

impl Parser {
    fn new(strict: bool) -> Self {
        Self {
            strict,
            turns: Vec::new(),
            current: None,
            sink: Sink::None,
            blanks: 0,
            open_empty: None,
            preamble: Vec::new(),
            preamble_lines: None,
            diagnostics: Vec::new(),
        }
    }

    fn warn(&mut self, kind: DiagnosticKind, line: usize, message: impl Into<String>) {
        self.diagnostics
            .push(Diagnostic::new(Severity::Warning, kind, line, message));
    }

    fn error(&mut self, kind: DiagnosticKind, line: usize, message: impl Into<String>) {
        self.diagnostics
            .push(Diagnostic::new(Severity::Error, kind, line, message));
    }

    fn line(&mut self, ln: usize, raw: &str) {
        match classify(raw) {
            LineClass::Blank => {
                self.blanks += 1;
                return;
            }
            LineClass::Text => self.continuation(ln, raw),
            LineClass::Header(kind, rest) => {
                self.close_open_empty();
                self.finish_turn();
                self.current = Some(Builder::new(kind));
                self.sink = Sink::None;
                if !rest.is_empty() {
                    self.blanks = 0;
                    self.line(ln, rest);
                }
            }
            LineClass::Scene(value) => {
                self.close_open_empty();
                self.scene(ln, raw, value);
            }
            LineClass::Tag(tag, value) => {
                self.close_open_empty();
                self.tag(ln, raw, tag, value);
            }
            LineClass::Malformed => {
                self.close_open_empty();
                if self.current.is_none() {
                    self.preamble_line(ln, raw);
                } else {
                    self.warn(
                        DiagnosticKind::MalformedTag,
                        ln,
                        "line starts with '[' but is not a tag",
                    );
                    self.start_freeform(raw);
                }
            }
        }
        self.blanks = 0;
    }

    fn preamble_line(&mut self, ln: usize, raw: &str) {
        self.preamble.push(raw.trim_end().to_string());
        self.preamble_lines = Some(match self.preamble_lines {
            Some((first, _)) => (first, ln),
            None => (ln, ln),
        });
        self.sink = Sink::Preamble;
    }

    fn start_freeform(&mut self, raw: &str) {
        let Some(b) = self.current.as_mut() else {
            return;
        };
        let ff = b.freeform_mut();
        ff.push(raw.trim_end().to_string());
        self.sink = Sink::Freeform(ff.len() - 1);
    }

    fn continuation(&mut self, ln: usize, raw: &str) {
        let blanks = self.blanks;
        let target: Option<&mut String> = match (self.sink, self.current.as_mut()) {
            (Sink::Preamble, _) => self.preamble.last_mut(),
            (Sink::Scene, Some(b)) => b.game.scene.as_mut(),
            (Sink::BlockEntry(bi, ei), Some(b)) => {
                Some(&mut b.game.npc_blocks[bi].entries[ei].value)
            }
            (Sink::PlayerEntry(ei), Some(b)) => Some(&mut b.player.entries[ei].value),
            (Sink::Freeform(fi), Some(b)) => Some(&mut b.freeform_mut()[fi]),
            _ => None,
        };
        match target {
            Some(value) => {
                if value.trim().is_empty() {
                    *value = raw.trim().to_string();
                } else {
                    for _ in 0..=blanks {
                        value.push('\n');
                    }
                    value.push_str(raw.trim_end());
                }
                if matches!(self.sink, Sink::Preamble) {
                    if let Some(r) = self.preamble_lines.as_mut() {
                        r.1 = ln;
                    }
                }
                self.open_empty = None;
            }
            None => {
                if self.current.is_none() {
                    self.preamble_line(ln, raw);
                } else {
                    self.warn(
                        DiagnosticKind::StrayLine,
                        ln,
                        "text with no preceding value to continue",
                    );
                    self.start_freeform(raw);
                }
            }
        }
    }

    fn scene(&mut self, ln: usize, raw: &str, value: &str) {
        let Some(b) = self.current.as_mut() else {
            self.preamble_line(ln, raw);
            return;
        };
        match (b.kind, b.game.scene.as_mut()) {
            (TurnKind::Game, None) => {
                b.game.scene = Some(value.to_string());
                self.sink = Sink::Scene;
            }
            // a second scene line joins the first
            (TurnKind::Game, Some(scene)) => {
                for _ in 0..=self.blanks {
                    scene.push('\n');
                }
                scene.push_str(raw.trim_end());
                self.sink = Sink::Scene;
                self.warn(
                    DiagnosticKind::UnexpectedScene,
                    ln,
                    "second scene line in one game turn",
                );
            }
            (TurnKind::Player, _) => {
                self.warn(
                    DiagnosticKind::UnexpectedScene,
                    ln,
                    "scene line in a player turn",
                );
                if matches!(self.sink, Sink::PlayerEntry(_) | Sink::Freeform(_)) {
                    self.continuation(ln, raw);
                } else {
                    self.start_freeform(raw);
                }
            }
        }
    }

    fn tag(&mut self, ln: usize, raw: &str, tag: Tag, value: &str) {
        let Some(b) = self.current.as_mut() else {
            self.preamble_line(ln, raw);
            return;
        };
        match b.kind {
            TurnKind::Game if tag == Tag::ID => {
                let id = npc_id_from_value(value);
                if id.is_empty() {
                    self.error(DiagnosticKind::EmptyNpcId, ln, "[ID] line without a name");
                    self.start_freeform(raw);
                } else {
                    b.game.npc_blocks.push(NpcBlock::new(id));
                    self.sink = Sink::IdHeader;
                }
            }
            TurnKind::Game => {
                let Some(bi) = b.game.npc_blocks.len().checked_sub(1) else {
                    self.warn(
                        DiagnosticKind::TagOutsideBlock,
                        ln,
                        format!("{tag} appears before any [ID] block"),
                    );
                    self.start_freeform(raw);
                    return;
                };
                let block = &mut b.game.npc_blocks[bi];
                let duplicate = block.entries.iter().any(|e| e.tag == tag);
                let npc_id = block.npc_id.clone();
                block.entries.push(TagEntry::new(tag.clone(), value));
                self.sink = Sink::BlockEntry(bi, block.entries.len() - 1);
                if duplicate {
                    self.error(
                        DiagnosticKind::DuplicateTagInBlock,
                        ln,
                        format!("duplicate {tag} in block for {npc_id}"),
                    );
                }
                if value.is_empty() {
                    self.open_empty = Some(ln);
                }
            }
            TurnKind::Player => {
                b.player.entries.push(TagEntry::new(tag.clone(), value));
                self.sink = Sink::PlayerEntry(b.player.entries.len() - 1);
                if tag != Tag::ACTION && tag != Tag::WORDS {
                    self.warn(
                        DiagnosticKind::PlayerTagViolation,
                        ln,
                        format!("player turns normally use only [Action] and [Words], found {tag}"),
                    );
                }
                if value.is_empty() {
                    self.open_empty = Some(ln);
                }
            }
        }
    }

    /// Turns a still-empty tag entry into a freeform line.
    fn close_open_empty(&mut self) {
        let Some(ln) = self.open_empty.take() else {
            return;
        };
        let Some(b) = self.current.as_mut() else {
            return;
        };
        let removed = match self.sink {
            Sink::BlockEntry(bi, ei) => Some(b.game.npc_blocks[bi].entries.remove(ei)),
            Sink::PlayerEntry(ei) => Some(b.player.entries.remove(ei)),
            _ => None,
        };
        if let Some(entry) = removed {
            let tag = entry.tag.bracketed();
            b.freeform_mut().push(tag.clone());
            let message = format!("{tag} has no value");
            self.sink = Sink::None;
            // A duplicate reported for this entry no longer applies.
            if let Some(pos) = self
                .diagnostics
                .iter()
                .rposition(|d| d.kind == DiagnosticKind::DuplicateTagInBlock && d.lines.0 == ln)
            {
                self.diagnostics.remove(pos);
            }
            self.error(DiagnosticKind::UnterminatedTag, ln, message);
        }
    }

    fn finish_turn(&mut self) {
        if let Some(b) = self.current.take() {
            self.turns.push(b.build());
        }
        self.sink = Sink::None;
    }

    fn finish(mut self) -> ParsedTranscript {
        self.close_open_empty();
        self.finish_turn();
        if let Some((first, last)) = self.preamble_lines {
            let severity = if self.strict {
                Severity::Error
            } else {
                Severity::Warning
            };
            self.diagnostics.insert(
                0,
                Diagnostic {
                    severity,
                    kind: DiagnosticKind::OrphanContent,
                    lines: (first, last),
                    message: "content before the first turn header".into(),
                },
            );
        }
        let next_speaker = match self.turns.last() {
            Some(t) if t.is_empty() => {
                let kind = t.kind();
                self.turns.pop();
                Some(kind)
            }
            _ => None,
        };
        self.diagnostics.sort_by_key(|d| d.lines.0);
        ParsedTranscript {
            turns: self.turns,
            next_speaker,
            preamble: self.preamble,
            diagnostics: self.diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turn_format::{serialize_transcript, serialize_turn};

    fn lenient(text: &str) -> ParsedTranscript {
        parse_transcript(text, false).unwrap()
    }

    #[test]
    fn empty_input_has_no_turns_and_no_diagnostics() {
        let p = lenient("");
        assert!(p.turns.is_empty());
        assert!(p.diagnostics.is_empty());
        assert_eq!(p.next_speaker, None);
    }

    #[test]
    fn trailing_bare_header_is_the_next_speaker() {
        let p = lenient("Game:\nScene: A room.\n\nPlayer:");
        assert_eq!(p.turns.len(), 1);
        assert_eq!(p.next_speaker, Some(TurnKind::Player));
    }

    #[test]
    fn empty_turn_in_the_middle_is_kept() {
        let p = lenient("Game:\n\nPlayer:\n[Words] hi");
        assert_eq!(p.turns.len(), 2);
        assert_eq!(p.turns[0], Turn::Game(GameTurn::default()));
    }

    #[test]
    fn multi_line_values_continue_until_next_tag() {
        let p = lenient("Player:\n[Words] first line\nsecond line\n\nthird\n[Action] wave");
        let Turn::Player(pt) = &p.turns[0] else {
            panic!()
        };
        assert_eq!(pt.entries[0].value, "first line\nsecond line\n\nthird");
        assert_eq!(pt.entries[1].value, "wave");
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn tag_value_may_start_on_the_next_line() {
        let p = lenient("Game:\n[ID] Neighbor:\n[Thought]\nI should run.\n[Words] Run!");
        let block = &p.turns[0].npc_blocks()[0];
        assert_eq!(block.get(&Tag::THOUGHT), Some("I should run."));
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn tag_without_value_or_continuation_is_unterminated() {
        let text = "Game:\n[ID] Neighbor:\n[Thought]\n[Words] Run!";
        let p = lenient(text);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::UnterminatedTag);
        assert_eq!(p.diagnostics[0].lines, (3, 3));
        let Turn::Game(g) = &p.turns[0] else { panic!() };
        assert_eq!(g.freeform, vec!["[Thought]".to_string()]);
        assert_eq!(g.npc_blocks[0].entries.len(), 1);

        let err = parse_transcript(text, true).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnterminatedTag {
                line: 3,
                message: "[Thought] has no value".into()
            }
        );
    }

    #[test]
    fn duplicate_tag_in_block_is_an_error() {
        let text = "Game:\n[ID] A:\n[Mood] calm\n[Mood] angry";
        let p = lenient(text);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::DuplicateTagInBlock);
        assert_eq!(p.turns[0].npc_blocks()[0].entries.len(), 2);
        assert_eq!(
            parse_transcript(text, true).unwrap_err(),
            ParseError::DuplicateTagInBlock {
                line: 4,
                message: "duplicate [Mood] in block for A".into()
            }
        );
    }

    #[test]
    fn orphan_content_is_a_warning_when_lenient_and_an_error_when_strict() {
        let text = "hello there\nGame:\nScene: x";
        let p = lenient(text);
        assert_eq!(p.preamble, vec!["hello there".to_string()]);
        assert_eq!(p.diagnostics[0].severity, Severity::Warning);
        assert_eq!(
            parse_transcript(text, true).unwrap_err(),
            ParseError::OrphanContent { line: 1 }
        );
    }

    #[test]
    fn header_with_inline_content_is_split() {
        let p = lenient("Player: [Words] Hi there\nGame: Scene: Dark.");
        assert_eq!(p.turns.len(), 2);
        assert_eq!(
            serialize_transcript(&p.turns),
            "Player:\n[Words] Hi there\n\nGame:\nScene: Dark."
        );
    }

    #[test]
    fn tag_names_are_matched_case_insensitively_and_recased() {
        let p = lenient("game:\nscene: x\n[id] bob:\n[ mood ] calm");
        assert_eq!(
            serialize_turn(&p.turns[0]),
            "Game:\nScene: x\n[ID] bob:\n[Mood] calm"
        );
    }

    #[test]
    fn lenient_parse_keeps_unattributable_lines() {
        let p = lenient("Game:\nThe lights flicker.\n[Mood] tense\n[broken\nScene: Hall.");
        let Turn::Game(g) = &p.turns[0] else { panic!() };
        assert_eq!(
            g.freeform,
            vec!["The lights flicker.", "[Mood] tense", "[broken"]
        );
        assert_eq!(g.scene.as_deref(), Some("Hall."));
        assert!(p
            .diagnostics
            .iter()
            .all(|d| d.severity == Severity::Warning));
    }

    #[test]
    fn crlf_line_endings_are_accepted() {
        let p = lenient("Player:\r\n[Words] hi\r\n");
        assert_eq!(serialize_turn(&p.turns[0]), "Player:\n[Words] hi");
    }
}
