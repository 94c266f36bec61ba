//! Design-room story document.
//!
//! A document holds the opening story, the model instructions and the turns
//! written so far. Once the live turns exceed the character budget, all but
//! the most recent turns are archived behind a model-written summary.
//! Archived turns stay in the document (they feed plot generation) but can
//! no longer be edited and are not sent with next-turn prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plot::Plot;
use crate::prompt::{build_design_next_turn, SUMMARY_LABEL};
use crate::provider::{Provider, ProviderError};
use crate::summarizer::{generate_plot, summarize_history, SummarizeError};
use crate::turn_format::{
    header_kind, parse_transcript, serialize_transcript, Transcript, Turn, TurnKind,
};

/// Character budget and retained-turn count for prompt context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub max_chars: usize,
    pub keep_last: usize,
}

impl Default for ContextPolicy {
    fn default() -> Self {
        Self {
            max_chars: 40_000,
            keep_last: 10,
        }
    }
}

impl ContextPolicy {
    /// Number of leading turns of `live` to archive, if the budget is exceeded.
    pub fn turns_to_archive(&self, live: &[Turn]) -> Option<usize> {
        let len: usize = live.iter().map(Turn::raw_char_len).sum();
        (len > self.max_chars && live.len() > self.keep_last).then(|| live.len() - self.keep_last)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edit {
    Append(Turn),
    Replace(usize, Turn),
    Delete(usize),
    /// Drops every turn after the given index.
    TruncateAfter(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoryError {
    #[error("turn {index} does not exist (story has {len} turns)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("turn {index} has been archived and can no longer be edited")]
    EditsArchivedContent { index: usize },
    #[error("opening story and instructions must be set before generating")]
    NotInitialized,
    #[error("partial turn starts with a {found:?} header but a {requested:?} turn was requested")]
    PartialKindMismatch {
        requested: TurnKind,
        found: TurnKind,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("the model returned an empty completion")]
    EmptyCompletion,
    #[error("could not read a {0:?} turn from the completion")]
    ParseFailure(TurnKind),
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryDocument {
    opening_story: String,
    instructions: String,
    archived_turns: Vec<Turn>,
    live_turns: Vec<Turn>,
    archive_summary: Option<String>,
}

impl StoryDocument {
    pub fn new(opening_story: impl Into<String>, instructions: impl Into<String>) -> Self {
        Self {
            opening_story: opening_story.into(),
            instructions: instructions.into(),
            ..Default::default()
        }
    }

    pub fn with_turns(mut self, turns: Vec<Turn>) -> Self {
        self.live_turns = turns;
        self
    }

    pub fn opening_story(&self) -> &str {
        &self.opening_story
    }

    pub fn instructions(&self) -> &str {
        &self.instructions
    }

    pub fn set_opening_story(&mut self, text: impl Into<String>) {
        self.opening_story = text.into();
    }

    pub fn set_instructions(&mut self, text: impl Into<String>) {
        self.instructions = text.into();
    }

    pub fn live_turns(&self) -> &[Turn] {
        &self.live_turns
    }

    pub fn archived_turns(&self) -> &[Turn] {
        &self.archived_turns
    }

    pub fn archived_turn_count(&self) -> usize {
        self.archived_turns.len()
    }

    pub fn archive_summary(&self) -> Option<&str> {
        self.archive_summary.as_deref()
    }

    /// Archived followed by live turns.
    pub fn all_turns(&self) -> impl Iterator<Item = &Turn> {
        self.archived_turns.iter().chain(self.live_turns.iter())
    }

    pub fn turn_count(&self) -> usize {
        self.archived_turns.len() + self.live_turns.len()
    }

    pub fn live_char_len(&self) -> usize {
        self.live_turns.iter().map(Turn::raw_char_len).sum()
    }

    pub fn is_initialized(&self) -> bool {
        !self.opening_story.trim().is_empty() && !self.instructions.trim().is_empty()
    }

    /// The kind that naturally follows the last turn.
    pub fn next_kind(&self) -> TurnKind {
        self.all_turns()
            .last()
            .map(|t| t.kind().other())
            .unwrap_or(TurnKind::Game)
    }

    /// Maps an absolute turn index to a live index.
    fn live_index(&self, index: usize) -> Result<usize, StoryError> {
        let archived = self.archived_turns.len();
        if index < archived {
            return Err(StoryError::EditsArchivedContent { index });
        }
        let live = index - archived;
        if live >= self.live_turns.len() {
            return Err(StoryError::IndexOutOfRange {
                index,
                len: self.turn_count(),
            });
        }
        Ok(live)
    }

    /// Returns a copy with `edit` applied. Indices count archived turns too.
    pub fn apply_edit(&self, edit: Edit) -> Result<StoryDocument, StoryError> {
        let mut doc = self.clone();
        match edit {
            Edit::Append(turn) => doc.live_turns.push(turn),
            Edit::Replace(index, turn) => {
                let i = self.live_index(index)?;
                doc.live_turns[i] = turn;
            }
            Edit::Delete(index) => {
                let i = self.live_index(index)?;
                doc.live_turns.remove(i);
            }
            Edit::TruncateAfter(index) => {
                let i = self.live_index(index)?;
                doc.live_turns.truncate(i + 1);
            }
        }
        Ok(doc)
    }

    /// Generates the next turn of `kind` without modifying the document.
    ///
    /// `partial` is the beginning of the turn the designer has already
    /// written; the completion continues it.
    pub fn generate_next_turn(
        &self,
        kind: TurnKind,
        partial: Option<&str>,
        provider: &dyn Provider,
    ) -> Result<Turn, StoryError> {
        if !self.is_initialized() {
            return Err(StoryError::NotInitialized);
        }
        if let Some(found) = partial
            .and_then(|p| p.lines().find(|l| !l.trim().is_empty()))
            .and_then(header_kind)
        {
            if found != kind {
                return Err(StoryError::PartialKindMismatch {
                    requested: kind,
                    found,
                });
            }
        }
        let request = build_design_next_turn(self, kind, partial);
        let completion = provider.complete(&request)?;
        if completion.trim().is_empty() {
            return Err(StoryError::EmptyCompletion);
        }
        let text = match partial {
            Some(p) if !p.trim().is_empty() => {
                join_partial(&crate::prompt::completion_point(kind, Some(p)), &completion)
            }
            _ => with_header(kind, &completion),
        };
        turn_from_completion(kind, &text).ok_or(StoryError::ParseFailure(kind))
    }

    /// Archives all but the last `keep_last` turns when the live turns are
    /// over budget. The document is unchanged if summarization fails.
    pub fn maybe_archive(
        &self,
        provider: &dyn Provider,
        policy: &ContextPolicy,
    ) -> Result<StoryDocument, StoryError> {
        let Some(count) = policy.turns_to_archive(&self.live_turns) else {
            return Ok(self.clone());
        };
        let moved = &self.live_turns[..count];
        let summary = summarize_history(
            self.archive_summary.as_deref(),
            moved,
            &self.opening_story,
            &self.instructions,
            provider,
        )?;
        let mut doc = self.clone();
        doc.archived_turns.extend(doc.live_turns.drain(..count));
        doc.archive_summary = Some(summary);
        Ok(doc)
    }

    /// Plot for the whole story: archived turns first, then the live turns
    /// merged on top of that plot.
    pub fn generate_plot(&self, provider: &dyn Provider) -> Result<Plot, StoryError> {
        let mut plot: Option<Plot> = None;
        for segment in [&self.archived_turns, &self.live_turns] {
            if segment.is_empty() {
                continue;
            }
            plot = Some(generate_plot(plot.as_ref(), segment, provider)?);
        }
        plot.ok_or(StoryError::Summarize(SummarizeError::EmptySegment))
    }
}

/// Prepends the turn header unless the completion already starts with one.
fn with_header(kind: TurnKind, completion: &str) -> String {
    let first = completion.lines().find(|l| !l.trim().is_empty());
    if first.and_then(header_kind).is_some() {
        completion.to_string()
    } else {
        format!(
            "{}\n{}",
            kind.header(),
            completion.trim_start_matches(['\n', '\r'])
        )
    }
}

/// Joins a partial turn and its continuation so the continuation completes
/// the partial's last line unless it starts a new line of its own.
fn join_partial(partial: &str, completion: &str) -> String {
    let boundary_ws =
        partial.ends_with(char::is_whitespace) || completion.starts_with(char::is_whitespace);
    if boundary_ws {
        return format!("{partial}{completion}");
    }
    let first = completion.lines().next().unwrap_or_default();
    let structural = first.starts_with('[')
        || crate::turn_format::parse::strip_prefix_ci(first, "scene:").is_some();
    if structural {
        format!("{partial}\n{completion}")
    } else {
        format!("{partial} {completion}")
    }
}

fn turn_from_completion(kind: TurnKind, text: &str) -> Option<Turn> {
    let parsed = parse_transcript(text, false).ok()?;
    parsed.turns.into_iter().next().filter(|t| t.kind() == kind)
}

const OPENING_LABEL: &str = "Opening story:";
const INSTRUCTIONS_LABEL: &str = "Instructions:";
const ARCHIVED_LABEL: &str = "Archived turns:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoryFileError {
    #[error("story file has no {0} section")]
    MissingSection(&'static str),
    #[error("story file is inconsistent: {0}")]
    Inconsistent(String),
}

impl StoryDocument {
    /// The `.story` text: labeled header sections, then the full transcript
    /// ending in the header of the next expected turn.
    pub fn to_story_file(&self) -> String {
        let mut sections = vec![
            format!("{OPENING_LABEL} {}", self.opening_story),
            format!("{INSTRUCTIONS_LABEL} {}", self.instructions),
        ];
        if let Some(summary) = &self.archive_summary {
            sections.push(format!("{SUMMARY_LABEL} {summary}"));
        }
        if !self.archived_turns.is_empty() {
            sections.push(format!("{ARCHIVED_LABEL} {}", self.archived_turns.len()));
        }
        let turns: Vec<Turn> = self.all_turns().cloned().collect();
        if !turns.is_empty() {
            sections.push(serialize_transcript(&turns));
        }
        sections.push(self.next_kind().header().to_string());
        let mut text = sections.join("\n\n");
        text.push('\n');
        text
    }

    pub fn parse_story_file(text: &str) -> Result<StoryDocument, StoryFileError> {
        let lines: Vec<&str> = text.lines().collect();
        let body_start = lines
            .iter()
            .position(|l| header_kind(l).is_some())
            .unwrap_or(lines.len());

        const LABELS: [&str; 4] = [
            OPENING_LABEL,
            INSTRUCTIONS_LABEL,
            SUMMARY_LABEL,
            ARCHIVED_LABEL,
        ];
        let mut slots: [Option<String>; 4] = Default::default();
        let mut current: Option<usize> = None;
        for line in &lines[..body_start] {
            let labeled = LABELS.iter().enumerate().find_map(|(i, label)| {
                crate::turn_format::parse::strip_prefix_ci(line, label).map(|rest| (i, rest))
            });
            if let Some((i, rest)) = labeled {
                slots[i] = Some(rest.trim_start().to_string());
                current = Some(i);
            } else if let Some(value) = current.and_then(|i| slots[i].as_mut()) {
                value.push('\n');
                value.push_str(line.trim_end());
            }
        }
        let [opening, instructions, summary, archived] = slots;
        let clean = |v: Option<String>| v.map(|s| s.trim().to_string());
        let opening = clean(opening).ok_or(StoryFileError::MissingSection("Opening story"))?;
        let instructions =
            clean(instructions).ok_or(StoryFileError::MissingSection("Instructions"))?;
        let summary = clean(summary);
        let archived_count = match clean(archived) {
            Some(n) => n
                .parse::<usize>()
                .map_err(|_| StoryFileError::Inconsistent(format!("archived turn count {n:?}")))?,
            None => 0,
        };

        let body = lines[body_start..].join("\n");
        let parsed = parse_transcript(&body, false)
            .expect("lenient parsing does not fail")
            .into_transcript();
        let Transcript { mut turns, .. } = parsed;
        if archived_count > turns.len() {
            return Err(StoryFileError::Inconsistent(format!(
                "{archived_count} archived turns but only {} turns",
                turns.len()
            )));
        }
        if (archived_count > 0) != summary.is_some() {
            return Err(StoryFileError::Inconsistent(
                "a summary must be present exactly when turns are archived".into(),
            ));
        }
        let live_turns = turns.split_off(archived_count);
        Ok(StoryDocument {
            opening_story: opening,
            instructions,
            archived_turns: turns,
            live_turns,
            archive_summary: summary,
        })
    }
}
