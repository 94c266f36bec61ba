//! Plot model and its text codec.
//!
//! ```text
//! title: Shadows of Betrayal
//! Plot summary:
//! In Shadows of Betrayal, players ...
//! Key Events:
//! 1. The player opens the door ...
//! 2. The neighbor reveals ...
//! NPCs:
//! [ID] Neighbor
//! [Backstory] She has been living ...
//! ```

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::turn_format::parse::{classify, npc_id_from_value, strip_prefix_ci, LineClass};
use crate::turn_format::{same_npc, Tag};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub text: String,
    #[serde(default)]
    pub played: bool,
}

impl KeyEvent {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            played: false,
        }
    }
}

/// Latest known value of every tag written for one NPC.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcSnapshot {
    pub npc_id: String,
    pub latest: IndexMap<Tag, String>,
}

impl NpcSnapshot {
    pub fn new(npc_id: impl Into<String>) -> Self {
        Self {
            npc_id: npc_id.into(),
            latest: IndexMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plot {
    pub title: String,
    pub summary: String,
    pub key_events: Vec<KeyEvent>,
    pub npc_roster: Vec<NpcSnapshot>,
}

impl Plot {
    /// A plot can seed a room once it has a title and at least one event.
    pub fn is_valid(&self) -> bool {
        !self.title.trim().is_empty() && !self.key_events.is_empty()
    }

    pub fn has_npc(&self, npc_id: &str) -> bool {
        self.npc_roster.iter().any(|n| same_npc(&n.npc_id, npc_id))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlotParseError {
    #[error("plot is missing the {0} section")]
    MissingSection(&'static str),
}

/// Canonical plot text. Played flags are not part of it.
pub fn serialize_plot(plot: &Plot) -> String {
    let mut lines = vec![
        format!("title: {}", plot.title),
        "Plot summary:".to_string(),
    ];
    if !plot.summary.is_empty() {
        lines.push(plot.summary.clone());
    }
    lines.push("Key Events:".to_string());
    for (i, event) in plot.key_events.iter().enumerate() {
        lines.push(format!("{}. {}", i + 1, event.text));
    }
    lines.push("NPCs:".to_string());
    for npc in &plot.npc_roster {
        lines.push(format!("[ID] {}", npc.npc_id));
        for (tag, value) in &npc.latest {
            if value.is_empty() {
                lines.push(tag.bracketed());
            } else {
                lines.push(format!("{tag} {value}"));
            }
        }
    }
    lines.join("\n")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preface,
    Title,
    Summary,
    Events,
    Npcs,
}

/// Strips markdown emphasis and heading marks around a header line.
fn header_text(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['#', '*', '_', ' '])
        .trim_end_matches(['*', '_', ' '])
}

fn section_header(line: &str) -> Option<(Section, &str)> {
    let text = header_text(line);
    for (prefix, section) in [
        ("title:", Section::Title),
        ("plot summary:", Section::Summary),
        ("key events:", Section::Events),
        ("npcs:", Section::Npcs),
    ] {
        if let Some(rest) = strip_prefix_ci(text, prefix) {
            let rest = rest.trim().trim_start_matches(['*', '_']).trim();
            return Some((section, rest));
        }
    }
    None
}

/// `3. text`, `3) text`, `- text`, `* text`
fn event_item(line: &str) -> Option<&str> {
    let t = line.trim();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return Some(r.trim());
        }
    }
    t.strip_prefix("- ")
        .or_else(|| t.strip_prefix("* "))
        .map(str::trim)
}

fn append_line(target: &mut String, blanks: usize, line: &str) {
    if target.is_empty() {
        target.push_str(line.trim());
    } else {
        for _ in 0..=blanks {
            target.push('\n');
        }
        target.push_str(line.trim_end());
    }
}

/// Parses plot text, tolerating header casing and light markdown.
///
/// The title, summary and key-event sections are required; the NPC section
/// is optional.
pub fn parse_plot(text: &str) -> Result<Plot, PlotParseError> {
    let mut section = Section::Preface;
    let mut title: Option<String> = None;
    let mut summary: Option<String> = None;
    let mut events: Option<Vec<KeyEvent>> = None;
    let mut roster: Vec<NpcSnapshot> = Vec::new();
    // (npc index, tag) receiving continuation lines
    let mut open_value: Option<(usize, Tag)> = None;
    let mut blanks = 0;

    for raw in text.lines() {
        if raw.trim().is_empty() {
            blanks += 1;
            continue;
        }
        if let Some((next, rest)) = section_header(raw) {
            section = next;
            open_value = None;
            blanks = 0;
            match next {
                Section::Title => {
                    title = Some(rest.to_string());
                }
                Section::Summary => {
                    summary.get_or_insert_with(String::new).push_str(rest);
                }
                Section::Events => {
                    let list = events.get_or_insert_with(Vec::new);
                    if let Some(item) = (!rest.is_empty()).then(|| event_item(rest).unwrap_or(rest))
                    {
                        list.push(KeyEvent::new(item));
                    }
                }
                Section::Npcs | Section::Preface => {}
            }
            continue;
        }
        match section {
            Section::Preface => {}
            Section::Title => {
                let t = title.get_or_insert_with(String::new);
                if t.is_empty() {
                    t.push_str(header_text(raw));
                }
            }
            Section::Summary => {
                append_line(summary.get_or_insert_with(String::new), blanks, raw);
            }
            Section::Events => {
                let list = events.get_or_insert_with(Vec::new);
                match (event_item(raw), list.last_mut()) {
                    (Some(item), _) => list.push(KeyEvent::new(item)),
                    (None, Some(last)) => append_line(&mut last.text, 0, raw.trim()),
                    (None, None) => list.push(KeyEvent::new(raw.trim())),
                }
            }
            Section::Npcs => match classify(raw) {
                LineClass::Tag(tag, value) if tag == Tag::ID => {
                    let id = npc_id_from_value(value);
                    open_value = None;
                    if id.is_empty() {
                        continue;
                    }
                    if !roster.iter().any(|n| same_npc(&n.npc_id, &id)) {
                        roster.push(NpcSnapshot::new(id.clone()));
                    }
                    let idx = roster.iter().position(|n| same_npc(&n.npc_id, &id));
                    open_value = idx.map(|i| (i, Tag::ID));
                }
                LineClass::Tag(tag, value) => {
                    if let Some((idx, _)) = open_value.take() {
                        roster[idx].latest.insert(tag.clone(), value.to_string());
                        open_value = Some((idx, tag));
                    }
                }
                _ => {
                    if let Some((idx, tag)) = &open_value {
                        if *tag != Tag::ID {
                            if let Some(v) = roster[*idx].latest.get_mut(tag) {
                                append_line(v, blanks, raw);
                            }
                        }
                    }
                }
            },
        }
        blanks = 0;
    }

    let title = title
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or(PlotParseError::MissingSection("title"))?;
    let summary = summary
        .map(|s| s.trim().to_string())
        .ok_or(PlotParseError::MissingSection("Plot summary"))?;
    let key_events: Vec<KeyEvent> = events
        .unwrap_or_default()
        .into_iter()
        .map(|e| KeyEvent::new(e.text.trim()))
        .filter(|e| !e.text.is_empty())
        .collect();
    if key_events.is_empty() {
        return Err(PlotParseError::MissingSection("Key Events"));
    }
    for npc in &mut roster {
        for v in npc.latest.values_mut() {
            *v = v.trim().to_string();
        }
    }
    Ok(Plot {
        title,
        summary,
        key_events,
        npc_roster: roster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_event_empty_roster_has_four_sections() {
        let plot = Plot {
            title: "T".into(),
            summary: "S".into(),
            key_events: vec![KeyEvent::new("E")],
            npc_roster: vec![],
        };
        let text = serialize_plot(&plot);
        assert_eq!(text, "title: T\nPlot summary:\nS\nKey Events:\n1. E\nNPCs:");
        assert_eq!(parse_plot(&text).unwrap(), plot);
    }

    #[test]
    fn missing_key_events_is_a_parse_failure() {
        let err = parse_plot("title: T\nPlot summary:\nS\n").unwrap_err();
        assert_eq!(err, PlotParseError::MissingSection("Key Events"));
        let err = parse_plot("title: T\nPlot summary:\nS\nKey Events:\n").unwrap_err();
        assert_eq!(err, PlotParseError::MissingSection("Key Events"));
    }

    #[test]
    fn missing_title_is_a_parse_failure() {
        let err = parse_plot("Plot summary:\nS\nKey Events:\n1. a").unwrap_err();
        assert_eq!(err, PlotParseError::MissingSection("title"));
    }

    #[test]
    fn header_casing_and_markdown_are_tolerated() {
        let text = "Here is your plot.\n\n**Title:** The Heist\n\n## Plot Summary:\nA crew robs a bank.\n\nKey events in order... \n\n### KEY EVENTS:\n1) Meet the crew\n- Case the bank\n   with binoculars\n";
        let plot = parse_plot(text).unwrap();
        assert_eq!(plot.title, "The Heist");
        assert_eq!(
            plot.summary,
            "A crew robs a bank.\n\nKey events in order..."
        );
        assert_eq!(
            plot.key_events,
            vec![
                KeyEvent::new("Meet the crew"),
                KeyEvent::new("Case the bank\nwith binoculars")
            ]
        );
    }

    #[test]
    fn title_and_summary_on_the_header_line() {
        let plot = parse_plot("Title: X\nPlot Summary: Short one.\nKey Events:\n1. a").unwrap();
        assert_eq!(plot.title, "X");
        assert_eq!(plot.summary, "Short one.");
    }

    #[test]
    fn npc_section_is_parsed_with_unique_ids() {
        let text = "title: T\nPlot summary:\nS\nKey Events:\n1. a\nNPCs:\n[ID] Neighbor\n[Mood] calm\n[ID] neighbor:\n[Mood] angry\n[Thought] run\naway";
        let plot = parse_plot(text).unwrap();
        assert_eq!(plot.npc_roster.len(), 1);
        let n = &plot.npc_roster[0];
        assert_eq!(n.npc_id, "Neighbor");
        assert_eq!(n.latest.get(&Tag::MOOD).unwrap(), "angry");
        assert_eq!(n.latest.get(&Tag::THOUGHT).unwrap(), "run\naway");
    }

    #[test]
    fn played_flags_are_not_serialized() {
        let mut plot = parse_plot("title: T\nPlot summary:\nS\nKey Events:\n1. a").unwrap();
        let before = serialize_plot(&plot);
        plot.key_events[0].played = true;
        assert_eq!(serialize_plot(&plot), before);
    }
}
