use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{classify, LineClass};
use super::{GameTurn, NpcBlock, PlayerTurn, Tag, TagEntry, Turn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Designer,
    Player,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    PlayerVisible,
    Hidden,
}

/// Which tags players may see. Scene text and `[ID]` headers are always shown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityMap {
    /// Keyed by lower-cased tag name.
    tags: BTreeMap<String, Visibility>,
    /// When set, tags missing from the map are hidden; otherwise they are an error.
    pub hide_unknown: bool,
}

impl Default for VisibilityMap {
    fn default() -> Self {
        let mut map = Self {
            tags: BTreeMap::new(),
            hide_unknown: true,
        };
        for tag in [Tag::ID, Tag::ACTION, Tag::WORDS] {
            map.set(&tag, Visibility::PlayerVisible);
        }
        for tag in [
            Tag::BACKSTORY,
            Tag::PERSONA,
            Tag::MOOD,
            Tag::THOUGHT,
            Tag::FACIAL_EXPRESSION,
            Tag::VOICE_EMOTION,
        ] {
            map.set(&tag, Visibility::Hidden);
        }
        map
    }
}

impl VisibilityMap {
    pub fn set(&mut self, tag: &Tag, visibility: Visibility) {
        self.tags.insert(tag.key(), visibility);
    }

    pub fn get(&self, tag: &Tag) -> Option<Visibility> {
        self.tags
            .get(&tag.key())
            .copied()
            .or(self.hide_unknown.then_some(Visibility::Hidden))
    }

    pub fn is_hidden(&self, tag: &Tag) -> bool {
        self.get(tag) != Some(Visibility::PlayerVisible)
    }

    /// Tags explicitly marked hidden.
    pub fn hidden_tags(&self) -> impl Iterator<Item = Tag> + '_ {
        self.tags
            .iter()
            .filter(|(_, v)| **v == Visibility::Hidden)
            .filter_map(|(k, _)| Tag::new(k))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RedactError {
    #[error("no visibility configured for {0}")]
    UnknownTagVisibility(String),
}

fn visible(tag: &Tag, vis: &VisibilityMap) -> Result<bool, RedactError> {
    match vis.get(tag) {
        Some(v) => Ok(v == super::Visibility::PlayerVisible),
        None => Err(RedactError::UnknownTagVisibility(tag.bracketed())),
    }
}

fn keep_entries(entries: &[TagEntry], vis: &VisibilityMap) -> Result<Vec<TagEntry>, RedactError> {
    let mut kept = Vec::with_capacity(entries.len());
    for e in entries {
        if visible(&e.tag, vis)? {
            kept.push(e.clone());
        }
    }
    Ok(kept)
}

/// Freeform text is shown unless it opens with a tag players may not see.
fn keep_freeform(chunks: &[String], vis: &VisibilityMap) -> Result<Vec<String>, RedactError> {
    let mut kept = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let first = chunk.lines().next().unwrap_or_default();
        let show = match classify(first) {
            LineClass::Tag(tag, _) => visible(&tag, vis)?,
            _ => true,
        };
        if show {
            kept.push(chunk.clone());
        }
    }
    Ok(kept)
}

/// Projects a turn for the given role.
///
/// Designers see the turn unchanged. Players lose every hidden tag entry;
/// scene text, `[ID]` headers and block order are preserved.
pub fn redact_turn(turn: &Turn, role: Role, vis: &VisibilityMap) -> Result<Turn, RedactError> {
    if role == Role::Designer {
        return Ok(turn.clone());
    }
    Ok(match turn {
        Turn::Game(g) => {
            let mut blocks = Vec::with_capacity(g.npc_blocks.len());
            for b in &g.npc_blocks {
                blocks.push(NpcBlock {
                    npc_id: b.npc_id.clone(),
                    entries: keep_entries(&b.entries, vis)?,
                });
            }
            Turn::Game(GameTurn {
                scene: g.scene.clone(),
                npc_blocks: blocks,
                freeform: keep_freeform(&g.freeform, vis)?,
            })
        }
        Turn::Player(p) => Turn::Player(PlayerTurn {
            author: p.author.clone(),
            entries: keep_entries(&p.entries, vis)?,
            freeform: keep_freeform(&p.freeform, vis)?,
        }),
    })
}
