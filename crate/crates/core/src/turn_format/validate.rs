use std::collections::HashSet;

use super::{Diagnostic, DiagnosticKind, Severity, Tag, TagEntry, Turn};

fn line_count(text: &str) -> usize {
    text.split('\n').count().max(1)
}

/// Checks a turn against the grammar's invariants.
///
/// Line ranges refer to the turn's canonical serialization.
pub fn validate_turn(turn: &Turn) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    // line 1 is the header
    let mut line = 2;
    let span = |text: &str, line: &mut usize| {
        let start = *line;
        *line += line_count(text);
        (start, *line - 1)
    };

    let check_entry = |entry: &TagEntry, lines: (usize, usize), diags: &mut Vec<Diagnostic>| {
        if entry.value.trim().is_empty() {
            diags.push(Diagnostic {
                severity: Severity::Error,
                kind: DiagnosticKind::UnterminatedTag,
                lines,
                message: format!("{} has no value", entry.tag),
            });
        }
    };

    match turn {
        Turn::Game(g) => {
            for chunk in &g.freeform {
                span(chunk, &mut line);
            }
            if let Some(scene) = &g.scene {
                span(scene, &mut line);
            }
            for block in &g.npc_blocks {
                let header = span(&block.npc_id, &mut line);
                if block.npc_id.trim().is_empty() {
                    diags.push(Diagnostic {
                        severity: Severity::Error,
                        kind: DiagnosticKind::EmptyNpcId,
                        lines: header,
                        message: "[ID] line without a name".into(),
                    });
                }
                let mut seen = HashSet::new();
                for entry in &block.entries {
                    let lines = span(&entry.value, &mut line);
                    check_entry(entry, lines, &mut diags);
                    if !seen.insert(entry.tag.clone()) {
                        diags.push(Diagnostic {
                            severity: Severity::Error,
                            kind: DiagnosticKind::DuplicateTagInBlock,
                            lines,
                            message: format!(
                                "duplicate {} in block for {}",
                                entry.tag, block.npc_id
                            ),
                        });
                    }
                }
            }
        }
        Turn::Player(p) => {
            for chunk in &p.freeform {
                span(chunk, &mut line);
            }
            for entry in &p.entries {
                let lines = span(&entry.value, &mut line);
                check_entry(entry, lines, &mut diags);
                if entry.tag != Tag::ACTION && entry.tag != Tag::WORDS {
                    diags.push(Diagnostic {
                        severity: Severity::Warning,
                        kind: DiagnosticKind::PlayerTagViolation,
                        lines,
                        message: format!(
                            "player turns normally use only [Action] and [Words], found {}",
                            entry.tag
                        ),
                    });
                }
            }
        }
    }
    diags
}
