//! Language-model distillation of stories: rolling summaries and plots,
//! plus the deterministic NPC roster that is appended to every plot.

use thiserror::Error;

use crate::plot::{parse_plot, NpcSnapshot, Plot, PlotParseError};
use crate::prompt::{build_plot_prompt, build_summary_prompt};
use crate::provider::{Provider, ProviderError};
use crate::turn_format::{same_npc, Turn};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SummarizeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("the model returned an empty completion")]
    EmptyCompletion,
    #[error("nothing to summarize")]
    EmptySegment,
    #[error(transparent)]
    PlotParseFailure(#[from] PlotParseError),
}

/// Folds `segment` into the running summary of the story.
pub fn summarize_history(
    prev_summary: Option<&str>,
    segment: &[Turn],
    opening: &str,
    instructions: &str,
    provider: &dyn Provider,
) -> Result<String, SummarizeError> {
    if segment.is_empty() {
        return Err(SummarizeError::EmptySegment);
    }
    let request = build_summary_prompt(prev_summary, segment, opening, instructions);
    let summary = provider.complete(&request)?.trim().to_string();
    if summary.is_empty() {
        return Err(SummarizeError::EmptyCompletion);
    }
    Ok(summary)
}

/// Builds a plot for `segment`, merging in `prior_plot` when the story was
/// processed in several segments.
///
/// The model writes the title, summary and key events. The NPC roster is
/// always recomputed from the turns (continuing from the prior plot's
/// roster), never taken from the completion. A completion that does not
/// parse as a plot is retried once with the same request.
pub fn generate_plot(
    prior_plot: Option<&Plot>,
    segment: &[Turn],
    provider: &dyn Provider,
) -> Result<Plot, SummarizeError> {
    if segment.is_empty() {
        return Err(SummarizeError::EmptySegment);
    }
    let request = build_plot_prompt(prior_plot, segment);
    let mut attempts = 0;
    let mut plot = loop {
        attempts += 1;
        let completion = provider.complete(&request)?;
        match parse_plot(&completion) {
            Ok(plot) => break plot,
            Err(e) if attempts < 2 => {
                tracing::warn!(error = %e, "plot completion did not parse, retrying");
            }
            Err(e) => return Err(e.into()),
        }
    };
    let prior_roster = prior_plot.map(|p| p.npc_roster.as_slice()).unwrap_or(&[]);
    plot.npc_roster = merge_roster(prior_roster, segment);
    Ok(plot)
}

/// One snapshot per NPC (first-seen casing and order), holding the last
/// value written for each tag.
pub fn extract_npcs(turns: &[Turn]) -> Vec<NpcSnapshot> {
    merge_roster(&[], turns)
}

/// Continues an existing roster with the NPC blocks in `turns`.
pub fn merge_roster(roster: &[NpcSnapshot], turns: &[Turn]) -> Vec<NpcSnapshot> {
    let mut out = roster.to_vec();
    for block in turns.iter().flat_map(Turn::npc_blocks) {
        let idx = match out.iter().position(|n| same_npc(&n.npc_id, &block.npc_id)) {
            Some(i) => i,
            None => {
                out.push(NpcSnapshot::new(block.npc_id.trim()));
                out.len() - 1
            }
        };
        for entry in &block.entries {
            out[idx]
                .latest
                .insert(entry.tag.clone(), entry.value.clone());
        }
    }
    out
}
