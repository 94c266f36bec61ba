#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use storyroom_core::plot::{serialize_plot, Plot};
use storyroom_core::provider::{Provider, ScriptedProvider};
use storyroom_core::room::{PlotEdit, Room, RoomView};
use storyroom_core::story::{ContextPolicy, Edit, StoryDocument};
use storyroom_core::testing::template_story;
use storyroom_core::turn_format::{
    parse_transcript, serialize_transcript, GameTurn, PlayerTurn, Role, Turn, TurnKind,
};
use storyroom_server::{AppState, SnapshotStore};

pub struct Client {
    app: Router,
    pub state: Arc<AppState>,
}

impl Client {
    pub fn new(provider: Arc<dyn Provider>, data_dir: &Path) -> Self {
        let state = AppState::new(provider, SnapshotStore::new(data_dir));
        Self {
            app: storyroom_server::router(state.clone()),
            state,
        }
    }

    pub fn scripted(responses: &[&str], data_dir: &Path) -> Self {
        Self::new(
            Arc::new(ScriptedProvider::from_responses(responses.iter().copied())),
            data_dir,
        )
    }

    pub async fn call(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(token) = token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let req = match body {
            Some(body) => req
                .header("content-type", "application/json")
                .body(Body::from(body.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Value {
        self.expect_ok(Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> Value {
        self.expect_ok(Method::POST, path, token, Some(body)).await
    }

    async fn expect_ok(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> Value {
        let (status, value) = self.call(method.clone(), path, token, body).await;
        assert!(status.is_success(), "{method} {path} -> {status}: {value}");
        value
    }
}

pub fn view_of(response: &Value) -> RoomView {
    serde_json::from_value(response["view"].clone()).unwrap()
}

// ---- the scripted end-to-end session

pub const FEEDBACK_PROMPTS: [&str; 2] = [
    "doesn't align with the NPC character",
    "doesn't follow the plot",
];

pub const PLAYER_DRAFT: &str = "[Action] Grab my coat and follow her.\n[Words] Fine. Lead the way.";

pub const PLOT_COMPLETION: &str = "title: Shadows of Betrayal
Plot summary:
A New York City resident is pulled into a web of espionage by a neighbor who claims to be protecting them.
Key Events:
1. The player opens the door to their neighbor, who claims to know personal details about them.
2. The neighbor reveals her backstory as a former spy seeking redemption.
3. The pair is cornered by a guard in the stairwell.
4. Agent Smith offers the player a deal.
NPCs:
[ID] Neighbor
[Persona] Determined, but also wounded.
";

pub const ADVANCE: [&str; 6] = [
    "Scene: A narrow stairwell.\n[ID] Neighbor:\n[Mood] Tense.\n[Words] \"Quickly, this way.\"",
    "Scene: The lobby.\n[ID] Neighbor:\n[Mood] Suspicious.\n[Words] \"Someone is following us.\"",
    "Scene: The lobby.\n[ID] Guard:\n[Persona] Bored.\n[Words] \"Sign in, please.\"",
    "Scene: The street.\n[ID] Neighbor:\n[Mood] Relieved.\n[Words] \"We made it out.\"",
    "Scene: A taxi pulls up in the rain.",
    "Scene: A black car.\n[ID] Agent Smith:\n[Thought] They will cooperate.\n[Words] \"Get in.\"",
];

pub const APPROVED_EDIT: &str =
    "Scene: A narrow stairwell.\n[ID] Neighbor:\n[Mood] Calm.\n[Words] \"Stay close to me.\"";

pub const PLAYER_MOVES: [&str; 5] = [
    "[Action] Follow her down the stairs.",
    "[Words] Who is following us?",
    "[Action] Sign the guest book.\n[Words] Done.",
    "[Words] Where now?",
    "[Action] Step back from the car.",
];

pub const EDITED_EVENT: &str = "A guard stops the pair in the lobby.";

/// Every completion the session asks for, in order.
pub fn scenario_script() -> Vec<String> {
    let mut script = vec![PLAYER_DRAFT.to_string(), PLOT_COMPLETION.to_string()];
    script.extend(ADVANCE.iter().map(|s| s.to_string()));
    script
}

pub fn scenario_provider() -> Arc<ScriptedProvider> {
    Arc::new(ScriptedProvider::from_responses(scenario_script()))
}

#[derive(Debug, PartialEq)]
pub struct ScenarioResult {
    pub story_file: String,
    pub plot: Plot,
    pub room_file: String,
    pub player_view: RoomView,
    pub designer_view: RoomView,
}

fn one_turn(kind: TurnKind, text: &str) -> Turn {
    let text = format!("{}\n{}", kind.header(), text);
    parse_transcript(&text, true).unwrap().turns.remove(0)
}

fn game(text: &str) -> GameTurn {
    match one_turn(TurnKind::Game, text) {
        Turn::Game(g) => g,
        _ => unreachable!(),
    }
}

fn player(text: &str) -> PlayerTurn {
    match one_turn(TurnKind::Player, text) {
        Turn::Player(p) => p,
        _ => unreachable!(),
    }
}

/// Design, plot, room, ten turns, feedback: through the HTTP API.
pub async fn run_scenario_api(data_dir: &Path) -> ScenarioResult {
    let api = Client::new(scenario_provider(), data_dir);
    let template = template_story();
    let design = api
        .post(
            "/design",
            None,
            json!({
                "opening_story": template.opening_story(),
                "instructions": template.instructions(),
                "transcript": serialize_transcript(template.live_turns()),
            }),
        )
        .await;
    let sid = design["session_id"].as_str().unwrap().to_string();
    api.post(&format!("/design/{sid}/generate"), None, json!({}))
        .await;
    api.post(&format!("/design/{sid}/save"), None, json!({}))
        .await;
    let plot = api
        .post(&format!("/design/{sid}/plot"), None, json!({}))
        .await;

    let created = api
        .post(
            "/rooms",
            None,
            json!({
                "plot": plot["plot_text"],
                "design_session": sid,
                "feedback_prompts": FEEDBACK_PROMPTS,
                "display_name": "Dana",
            }),
        )
        .await;
    let rid = created["room_id"].as_str().unwrap().to_string();
    let designer = created["token"].as_str().unwrap().to_string();
    let joined = api
        .post(
            &format!("/rooms/{rid}/join"),
            None,
            json!({"display_name": "Sam"}),
        )
        .await;
    let player = joined["token"].as_str().unwrap().to_string();
    let room = |p: &str| format!("/rooms/{rid}/{p}");
    let d = Some(designer.as_str());
    let p = Some(player.as_str());

    api.post(&room("control"), d, json!({"npc_id": "Neighbor"}))
        .await;
    for (round, moves) in PLAYER_MOVES.iter().enumerate() {
        api.post(&room("turns"), p, json!({"turn": moves})).await;
        api.post(&room("advance"), d, json!({})).await;
        match round {
            0 => {
                api.post(
                    &room("pending"),
                    d,
                    json!({"action": "approve", "turn": APPROVED_EDIT}),
                )
                .await;
            }
            1 => {
                api.post(&room("pending"), d, json!({"action": "regenerate"}))
                    .await;
                api.post(&room("plot/played"), d, json!({"index": 0})).await;
                api.post(
                    &room("plot/events"),
                    d,
                    json!({"edits": [{"op": "replace", "index": 2, "text": EDITED_EVENT}]}),
                )
                .await;
                api.post(&room("control"), d, json!({"npc_id": "neighbor"}))
                    .await;
            }
            _ => {}
        }
    }
    api.post(
        &room("feedback"),
        p,
        json!({"turn_index": 1, "label": FEEDBACK_PROMPTS[0]}),
    )
    .await;
    api.post(
        &room("feedback"),
        p,
        json!({"turn_index": 5, "label": "free", "text": "the guard was funny"}),
    )
    .await;
    api.post(&room("chat"), p, json!({"text": "/chat this is fun"}))
        .await;
    api.post(&room("save"), d, json!({})).await;

    let player_view = view_of(&api.get(&room("view"), p).await);
    let designer_view = view_of(&api.get(&room("view"), d).await);
    let store = &api.state.store;
    ScenarioResult {
        story_file: store.load_story(&sid, None).unwrap().1.to_story_file(),
        plot: store.load_plot(&sid, None).unwrap().1,
        room_file: store.load_room(&rid, None).unwrap().1.to_room_file(),
        player_view,
        designer_view,
    }
}

/// The same session issued directly against the library.
pub fn run_scenario_direct() -> ScenarioResult {
    let provider = scenario_provider();
    let template = template_story();
    let doc = StoryDocument::new(template.opening_story(), template.instructions())
        .with_turns(template.live_turns().to_vec());
    let doc = doc
        .maybe_archive(&*provider, &ContextPolicy::default())
        .unwrap();
    let turn = doc
        .generate_next_turn(doc.next_kind(), None, &*provider)
        .unwrap();
    let doc = doc.apply_edit(Edit::Append(turn)).unwrap();
    let plot = doc.generate_plot(&*provider).unwrap();

    let prompts = FEEDBACK_PROMPTS.iter().map(|s| s.to_string()).collect();
    let mut room = Room::create(
        "r1",
        plot.clone(),
        doc.opening_story(),
        doc.instructions(),
        prompts,
    )
    .unwrap();
    let d = room.join("Dana", Role::Designer);
    let p = room.join("Sam", Role::Player);
    room.toggle_npc_control(&d, "Neighbor").unwrap();
    for (round, moves) in PLAYER_MOVES.iter().enumerate() {
        room.submit_player_turn(&p, player(moves)).unwrap();
        room.advance_game_turn(&*provider).unwrap();
        match round {
            0 => room.approve_pending_turn(&d, game(APPROVED_EDIT)).unwrap(),
            1 => {
                use storyroom_core::room::Resolution;
                room.resolve_pending_turn(&d, Resolution::Regenerate, &*provider)
                    .unwrap();
                room.mark_event_played(&d, 0).unwrap();
                room.edit_plot_events(
                    &d,
                    &[PlotEdit::Replace {
                        index: 2,
                        text: EDITED_EVENT.into(),
                    }],
                )
                .unwrap();
                room.toggle_npc_control(&d, "neighbor").unwrap();
            }
            _ => {}
        }
    }
    room.submit_feedback(&p, 1, FEEDBACK_PROMPTS[0], None)
        .unwrap();
    room.submit_feedback(&p, 5, "free", Some("the guard was funny".into()))
        .unwrap();
    room.chat(&p, "/chat this is fun").unwrap();

    ScenarioResult {
        story_file: doc.to_story_file(),
        plot,
        room_file: room.to_room_file(),
        player_view: room.view_for(&p).unwrap(),
        designer_view: room.view_for(&d).unwrap(),
    }
}

pub fn plot_text(plot: &Plot) -> String {
    serialize_plot(plot)
}
