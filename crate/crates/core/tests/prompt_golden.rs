use std::path::PathBuf;

use storyroom_core::prompt::{NEXT_TURN_MAX_TOKENS, PLOT_MAX_TOKENS, SUMMARY_MAX_TOKENS};
use storyroom_core::testing::golden_requests;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/prompts")
        .join(format!("{name}.txt"))
}

/// Set `UPDATE_GOLDEN=1` to rewrite the fixtures.
#[test]
fn requests_match_checked_in_fixtures() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, request) in golden_requests() {
        let rendered = request.to_string();
        let path = fixture(name);
        if update {
            std::fs::write(&path, &rendered).unwrap();
            continue;
        }
        let expected =
            std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(rendered, expected, "{name} differs from its fixture");
    }
}

#[test]
fn caps_and_stops_follow_the_request_kind() {
    for (name, request) in golden_requests() {
        if name.contains("next_turn") {
            assert_eq!(request.max_tokens, NEXT_TURN_MAX_TOKENS);
            assert_eq!(request.stop_sequences, ["Player:", "Game:"]);
            assert!(request.system_message.is_some());
            assert_eq!(request.user_messages.len(), 1);
        } else {
            assert!(request.stop_sequences.is_empty(), "{name}");
            assert!(request.system_message.is_none(), "{name}");
        }
    }
    let requests = golden_requests();
    let by_name = |n: &str| requests.iter().find(|(k, _)| *k == n).unwrap().1.clone();
    assert_eq!(by_name("summary").max_tokens, SUMMARY_MAX_TOKENS);
    assert_eq!(by_name("plot").max_tokens, PLOT_MAX_TOKENS);
    assert_eq!(by_name("plot").user_messages.len(), 3);
}

#[test]
fn design_prompt_ends_at_the_completion_point() {
    let requests = golden_requests();
    let partial = &requests[0].1.user_messages[0];
    assert!(partial.starts_with("Summary of what happened before: In this story"));
    assert!(partial.ends_with("[Mood] Desperate and scared.\n[Thought]"));
    assert_eq!(partial.matches("\nGame:\n").count(), 2);
    let player = &requests[1].1.user_messages[0];
    assert!(player.ends_with("on the way.\"\n\nPlayer:"));
}

#[test]
fn game_room_prompt_embeds_the_plot_in_the_system_message() {
    let requests = golden_requests();
    let (_, req) = requests
        .iter()
        .find(|(n, _)| *n == "game_room_next_turn")
        .unwrap();
    let system = req.system_message.as_ref().unwrap();
    assert!(system
        .contains("\nUse the following plot to guide the game:\ntitle: Shadows of Betrayal\n"));
    assert!(req.user_messages[0].ends_with("once we are safe.\n\nGame:"));
}
