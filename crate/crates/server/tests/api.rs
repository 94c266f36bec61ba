mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{run_scenario_api, run_scenario_direct, view_of, Client};
use storyroom_core::room::{Phase, Room};
use storyroom_core::testing::{sample_plot, SAMPLE_PLOT};
use storyroom_core::turn_format::{Role, VisibilityMap};
use storyroom_server::state::AppState;
use storyroom_server::store::SnapshotStore;
use storyroom_server::{bind, serve_on, ServeError};

async fn open_room(api: &Client) -> (String, String, String) {
    let created = api
        .post("/rooms", None, json!({"plot": SAMPLE_PLOT, "opening_story": "o", "instructions": "i", "display_name": "D"}))
        .await;
    let joined = api
        .post("/rooms/r1/join", None, json!({"display_name": "P"}))
        .await;
    (
        created["room_id"].as_str().unwrap().into(),
        created["token"].as_str().unwrap().into(),
        joined["token"].as_str().unwrap().into(),
    )
}

#[tokio::test]
async fn health_reports_version_and_provider_mode() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[], dir.path());
    let health = api.get("/health", None).await;
    assert_eq!(health["status"], "ok");
    assert_eq!(health["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(health["provider"], "scripted");
}

#[tokio::test]
async fn api_session_matches_a_direct_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let api = run_scenario_api(dir.path()).await;
    let direct = run_scenario_direct();
    assert_eq!(api, direct);
    assert_eq!(api.designer_view.transcript.len(), 10);
    assert!(api.player_view.designer.is_none());
}

#[tokio::test]
async fn api_replays_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_scenario_api(a.path()).await;
    let second = run_scenario_api(b.path()).await;
    assert_eq!(first, second);
    for kind in [
        "stories/s1/v0001.story",
        "plots/s1/v0001.plot",
        "rooms/r1/v0001.room",
    ] {
        let x = std::fs::read(a.path().join(kind)).unwrap();
        let y = std::fs::read(b.path().join(kind)).unwrap();
        assert_eq!(x, y, "{kind}");
    }
}

#[tokio::test]
async fn tokens_are_scoped_to_one_room_and_role() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[], dir.path());
    let (rid, designer, player) = open_room(&api).await;
    let other = api
        .post(
            "/rooms",
            None,
            json!({"plot": SAMPLE_PLOT, "display_name": "E"}),
        )
        .await;
    let other_token = other["token"].as_str().unwrap();

    let path = format!("/rooms/{rid}/view");
    assert_eq!(
        api.call(Method::GET, &path, None, None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        api.call(Method::GET, &path, Some("nope"), None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        api.call(Method::GET, &path, Some(other_token), None)
            .await
            .0,
        StatusCode::FORBIDDEN
    );

    let control = format!("/rooms/{rid}/control");
    let (status, body) = api
        .call(
            Method::POST,
            &control,
            Some(&player),
            Some(json!({"npc_id": "Neighbor"})),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "forbidden");

    let join = format!("/rooms/{rid}/join");
    let as_designer = json!({"display_name": "X", "role": "designer"});
    let status = api
        .call(Method::POST, &join, None, Some(as_designer.clone()))
        .await
        .0;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let status = api
        .call(
            Method::POST,
            &join,
            Some(&player),
            Some(as_designer.clone()),
        )
        .await
        .0;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let second = api.post(&join, Some(&designer), as_designer).await;
    assert_eq!(view_of(&second["view"]).role, Role::Designer);
}

#[tokio::test]
async fn controlled_turns_wait_for_the_designer_and_players_only_see_generating() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(
        &["Scene: Hall.\n[ID] Neighbor:\n[Mood] Angry.\n[Words] \"Run.\""],
        dir.path(),
    );
    let (rid, d, p) = open_room(&api).await;
    let path = |s: &str| format!("/rooms/{rid}/{s}");
    api.post(&path("control"), Some(&d), json!({"npc_id": "Neighbor"}))
        .await;
    api.post(&path("turns"), Some(&p), json!({"turn": "[Words] hi"}))
        .await;
    let after = view_of(&api.post(&path("advance"), Some(&d), json!({})).await);
    assert_eq!(after.phase, Phase::AwaitingApproval);
    let pending = after.designer.unwrap().pending_turn.unwrap();
    assert_eq!(
        pending.controlled_ids.into_iter().collect::<Vec<_>>(),
        ["Neighbor"]
    );

    let player_view = view_of(&api.get(&path("view"), Some(&p)).await);
    assert_eq!(player_view.phase, Phase::Generating);
    assert_eq!(player_view.transcript.len(), 1);

    let (status, _) = api
        .call(
            Method::POST,
            &path("turns"),
            Some(&p),
            Some(json!({"turn": "[Words] again"})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let approve = json!({"action": "approve", "turn": "Scene: Hall.\n[ID] Neighbor:\n[Mood] Angry.\n[Words] \"Walk.\""});
    let done = view_of(&api.post(&path("pending"), Some(&d), approve).await);
    assert_eq!(done.phase, Phase::Ready);
    let text = api.get(&path("view"), Some(&p)).await["transcript_text"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(text.contains("[Words] \"Walk.\""));
    assert!(!text.contains("[Mood]"));
}

#[tokio::test]
async fn provider_failures_leave_the_room_usable() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[], dir.path());
    let (rid, d, p) = open_room(&api).await;
    let path = |s: &str| format!("/rooms/{rid}/{s}");
    api.post(&path("turns"), Some(&p), json!({"turn": "[Words] hi"}))
        .await;
    let (status, body) = api
        .call(Method::POST, &path("advance"), Some(&d), Some(json!({})))
        .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "provider_error");
    let view = view_of(&api.get(&path("view"), Some(&d)).await);
    assert_eq!(view.phase, Phase::Ready);
}

#[tokio::test]
async fn malformed_turns_and_unknown_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[], dir.path());
    let (rid, _, p) = open_room(&api).await;
    let turns = format!("/rooms/{rid}/turns");
    for bad in [
        "[Words]",
        "[Mood] sneaky",
        "Game:\nScene: x",
        "[Words] a\n\nPlayer:\n[Words] b",
    ] {
        let (status, body) = api
            .call(Method::POST, &turns, Some(&p), Some(json!({"turn": bad})))
            .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad:?}: {body}");
    }
    let status = api
        .call(Method::GET, "/rooms/r9/view", Some(&p), None)
        .await
        .0;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let status = api.call(Method::GET, "/design/s9", None, None).await.0;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let bad_plot = json!({"plot": "no title here", "display_name": "D"});
    let status = api
        .call(Method::POST, "/rooms", None, Some(bad_plot))
        .await
        .0;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn design_sessions_edit_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[" Behind you!"], dir.path());
    let s = api
        .post(
            "/design",
            None,
            json!({"opening_story": "o", "instructions": "i"}),
        )
        .await;
    let sid = s["session_id"].as_str().unwrap();
    let edit = format!("/design/{sid}/edit");
    api.post(
        &edit,
        None,
        json!({"op": "append", "turn": "Game:\nScene: A dock."}),
    )
    .await;
    api.post(
        &edit,
        None,
        json!({"op": "append", "turn": "Player:\n[Words] Who's there?"}),
    )
    .await;
    let gen = api
        .post(
            &format!("/design/{sid}/generate"),
            None,
            json!({"partial": "Game:\n[ID] Guard:\n[Words]"}),
        )
        .await;
    assert_eq!(gen["turn"], "Game:\n[ID] Guard:\n[Words] Behind you!");
    assert_eq!(gen["document"]["turn_count"], 3);

    let (status, _) = api
        .call(
            Method::POST,
            &edit,
            None,
            Some(json!({"op": "delete", "index": 7})),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let saved = api
        .post(&format!("/design/{sid}/save"), None, json!({}))
        .await;
    assert_eq!(saved["version"], 1);
    api.post(&edit, None, json!({"op": "truncate_after", "index": 0}))
        .await;
    api.post(&format!("/design/{sid}/save"), None, json!({}))
        .await;

    let v1 = api
        .post(&format!("/design/{sid}/load"), None, json!({"version": 1}))
        .await;
    assert_eq!(v1["turn_count"], 3);
    let latest = api
        .post(&format!("/design/{sid}/load"), None, json!({}))
        .await;
    assert_eq!(latest["turn_count"], 1);
    let live = api.get(&format!("/design/{sid}"), None).await;
    assert_eq!(live["story_file"], latest["story_file"]);
}

#[tokio::test]
async fn rooms_reload_from_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(&[], dir.path());
    let (rid, d, p) = open_room(&api).await;
    api.post(
        &format!("/rooms/{rid}/turns"),
        Some(&p),
        json!({"turn": "[Action] wave"}),
    )
    .await;
    api.post(&format!("/rooms/{rid}/save"), Some(&d), json!({}))
        .await;
    let status = api
        .call(Method::POST, &format!("/rooms/{rid}/save"), Some(&p), None)
        .await
        .0;
    assert_eq!(status, StatusCode::FORBIDDEN);

    let fresh = Client::scripted(&[], dir.path());
    let loaded = fresh
        .post(&format!("/rooms/{rid}/load"), None, json!({}))
        .await;
    let view = view_of(&loaded["view"]);
    assert_eq!(view.role, Role::Designer);
    assert_eq!(view.transcript.len(), 1);
    let status = fresh
        .call(Method::POST, &format!("/rooms/{rid}/load"), None, None)
        .await
        .0;
    assert_eq!(status, StatusCode::CONFLICT);
    // a new room on the reloaded server does not reuse the stored id
    let next = fresh
        .post(
            "/rooms",
            None,
            json!({"plot": SAMPLE_PLOT, "display_name": "D"}),
        )
        .await;
    assert_eq!(next["room_id"], "r2");
}

#[tokio::test]
async fn plain_text_view_is_the_role_scoped_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(
        &["Scene: Hall.\n[ID] Guard:\n[Mood] Grim.\n[Words] Halt."],
        dir.path(),
    );
    let (rid, d, p) = open_room(&api).await;
    api.post(
        &format!("/rooms/{rid}/turns"),
        Some(&p),
        json!({"turn": "[Words] hi"}),
    )
    .await;
    api.post(&format!("/rooms/{rid}/advance"), Some(&d), json!({}))
        .await;
    let req = Request::get(format!("/rooms/{rid}/view"))
        .header("authorization", format!("Bearer {p}"))
        .header("accept", "text/plain")
        .body(Body::empty())
        .unwrap();
    let res = storyroom_server::router(api.state.clone())
        .oneshot(req)
        .await
        .unwrap();
    let text =
        String::from_utf8(res.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    assert_eq!(
        text,
        "Player:\n[Words] hi\n\nGame:\nScene: Hall.\n[ID] Guard:\n[Words] Halt."
    );
}

async fn next_event(body: &mut Body) -> Value {
    let mut buf = String::new();
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .expect("event within 5s")
            .expect("stream open")
            .unwrap();
        if let Ok(data) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
        }
        if let Some(end) = buf.find("\n\n") {
            let event = &buf[..end];
            if let Some(data) = event.lines().find_map(|l| l.strip_prefix("data: ")) {
                return serde_json::from_str(data).unwrap();
            }
            buf.drain(..end + 2);
        }
    }
}

#[tokio::test]
async fn event_streams_carry_role_scoped_views() {
    let dir = tempfile::tempdir().unwrap();
    let api = Client::scripted(
        &["Scene: Hall.\n[ID] Neighbor:\n[Mood] Angry.\n[Backstory] Spy.\n[Words] \"Run.\""],
        dir.path(),
    );
    let (rid, d, p) = open_room(&api).await;
    let app = storyroom_server::router(api.state.clone());
    let subscribe = |token: &str| {
        Request::get(format!("/rooms/{rid}/events"))
            .header("authorization", format!("Bearer {token}"))
            .body(Body::empty())
            .unwrap()
    };
    let mut player_stream = app
        .clone()
        .oneshot(subscribe(&p))
        .await
        .unwrap()
        .into_body();
    let mut designer_stream = app
        .clone()
        .oneshot(subscribe(&d))
        .await
        .unwrap()
        .into_body();

    let first = next_event(&mut player_stream).await;
    assert!(first["view"].get("designer").is_none());
    assert!(next_event(&mut designer_stream).await["view"]["designer"].is_object());

    api.post(
        &format!("/rooms/{rid}/turns"),
        Some(&p),
        json!({"turn": "[Words] hi"}),
    )
    .await;
    api.post(&format!("/rooms/{rid}/advance"), Some(&d), json!({}))
        .await;
    let mut last = Value::Null;
    for _ in 0..3 {
        let event = next_event(&mut player_stream).await;
        let raw = event.to_string();
        assert!(event["view"].get("designer").is_none());
        for tag in VisibilityMap::default().hidden_tags() {
            assert!(!raw.contains(&tag.bracketed()), "{raw}");
        }
        assert!(!raw.contains("Angry") && !raw.contains("Spy"));
        last = event;
    }
    assert_eq!(last["view"]["transcript"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn concurrent_submissions_are_all_recorded_in_some_order() {
    let dir = tempfile::tempdir().unwrap();
    let api = Arc::new(Client::scripted(&[], dir.path()));
    let (rid, d, _) = open_room(&api).await;
    let mut tokens = Vec::new();
    for i in 0..4 {
        let j = api
            .post(
                &format!("/rooms/{rid}/join"),
                None,
                json!({"display_name": format!("P{i}")}),
            )
            .await;
        tokens.push(j["token"].as_str().unwrap().to_string());
    }
    let mut tasks = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        for n in 0..10 {
            let api = api.clone();
            let token = token.clone();
            let path = format!("/rooms/{rid}/turns");
            tasks.push(tokio::spawn(async move {
                api.post(
                    &path,
                    Some(&token),
                    json!({"turn": format!("[Words] {i}-{n}")}),
                )
                .await;
            }));
        }
    }
    for t in tasks {
        t.await.unwrap();
    }
    let view = view_of(&api.get(&format!("/rooms/{rid}/view"), Some(&d)).await);
    assert_eq!(view.transcript.len(), 40);
    let mut words: Vec<String> = view
        .transcript
        .iter()
        .map(|t| t.as_player().unwrap().entries[0].value.clone())
        .collect();
    words.sort();
    let mut expected: Vec<String> = (0..4)
        .flat_map(|i| (0..10).map(move |n| format!("{i}-{n}")))
        .collect();
    expected.sort();
    assert_eq!(words, expected);
}

#[tokio::test]
async fn occupied_port_is_a_bind_failure() {
    let taken = tokio::net::TcpListener::bind("0.0.0.0:0").await.unwrap();
    let port = taken.local_addr().unwrap().port();
    let err = bind(port).await.unwrap_err();
    assert!(matches!(err, ServeError::BindFailure { .. }), "{err}");
}

#[tokio::test]
async fn shutdown_flushes_changed_rooms() {
    let dir = tempfile::tempdir().unwrap();
    let provider = Arc::new(storyroom_core::provider::ScriptedProvider::from_responses(
        Vec::<String>::new(),
    ));
    let state = AppState::new(provider, SnapshotStore::new(dir.path()));
    let mut room = Room::create("r1", sample_plot(), "o", "i", vec![]).unwrap();
    room.join("D", Role::Designer);
    state.insert_room(room.clone());
    let listener = bind(0).await.unwrap();
    serve_on(listener, state.clone(), async {}).await.unwrap();
    let (meta, stored) = state.store.load_room("r1", None).unwrap();
    assert_eq!(meta.version, 1);
    assert_eq!(stored, room);
    // nothing changed, nothing written
    assert_eq!(state.flush().await.unwrap(), 0);
}
