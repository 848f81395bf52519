mod common;

use std::collections::HashSet;
use std::path::Path;

use common::{error_code, Client};
use embref_core::geom::Role;
use embref_core::render::{agent_view, render_observation, RenderConfig};
use embref_core::scenegen::Scene;
use embref_platform::config::PlatformConfig;
use embref_platform::service::report_from_store;
use embref_platform::store::{read_episodes, Dataset};
use serde_json::{json, Value};

struct Fixture {
    dir: tempfile::TempDir,
    cfg: PlatformConfig,
    client: Client,
}

impl Fixture {
    fn new(cfg: PlatformConfig) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ds = common::write_small_dataset(dir.path(), &cfg);
        let log = ds.episodes_path();
        let base = common::spawn(&cfg, ds, &log);
        Self {
            dir,
            cfg,
            client: Client::new(&base),
        }
    }

    fn dataset(&self) -> Dataset {
        Dataset::load(self.dir.path()).unwrap()
    }

    fn scene(&self, id: &str) -> Scene {
        self.dataset().scene(id).unwrap().clone()
    }

    fn episodes(&self) -> Vec<embref_core::agents::Episode> {
        read_episodes(&self.dir.path().join("episodes.jsonl")).unwrap()
    }

    fn session(&self, role: &str) -> (String, Vec<String>) {
        let (status, v) = self.client.post("/api/sessions", json!({ "role": role }));
        assert_eq!(status, 200, "{v}");
        let queue = v["scene_queue"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect();
        (v["session_id"].as_str().unwrap().to_string(), queue)
    }

    /// Normalized click on the rendered center of referent `index`.
    fn click_on(&self, scene: &Scene, index: usize) -> Value {
        let obs = render_observation(
            scene,
            Role::Listener,
            &RenderConfig::with_size(self.cfg.render_width, self.cfg.render_height),
        );
        let e = obs.referents().find(|e| e.index == Some(index)).expect("referent is visible to the listener");
        json!({ "u": e.center[0] / obs.width as f64, "v": e.center[1] / obs.height as f64 })
    }
}

fn whole_test_split() -> PlatformConfig {
    PlatformConfig {
        session_scenes: 8,
        ..common::small_config()
    }
}

#[test]
fn speaker_flow() {
    let f = Fixture::new(common::small_config());
    let (sid, queue) = f.session("speaker");
    assert_eq!(queue.len(), 4);
    let test: HashSet<String> = f.dataset().split("test").unwrap().scene_ids.iter().cloned().collect();
    assert!(queue.iter().all(|q| test.contains(q)));
    let scene_id = &queue[0];

    let (status, scene) = f.client.get(&format!("/api/scenes/{scene_id}"));
    assert_eq!(status, 200);
    assert_eq!(scene["scene_id"], json!(scene_id));
    assert!(scene.get("target_index").is_none());
    assert_eq!(scene["referents"].as_array().unwrap().len(), 3);

    let (status, r) = f.client.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    assert_eq!(status, 200, "{r}");
    let url = r["observation_url"].as_str().unwrap();
    assert!(url.contains("role=speaker"));
    assert!(r.get("text").is_none());
    let (status, png) = f.client.get_bytes(url);
    assert_eq!(status, 200);
    let offline = render_observation(
        &f.scene(scene_id),
        Role::Speaker,
        &RenderConfig::with_size(f.cfg.render_width, f.cfg.render_height),
    );
    assert_eq!(png, offline.to_png().unwrap());

    let (status, s) = f.client.post(
        &format!("/api/sessions/{sid}/speak"),
        json!({ "scene_id": scene_id, "text": "the ball closest to you" }),
    );
    assert_eq!(status, 200, "{s}");
    assert!(s["t_submit"].as_f64().unwrap() > r["t_reveal"].as_f64().unwrap());
    assert!(s["duration_ms"].as_f64().unwrap() >= 0.0);

    let eps = f.episodes();
    assert_eq!(eps.len(), 1);
    let e = &eps[0];
    assert_eq!(json!(e.episode_id), s["episode_id"]);
    assert_eq!(json!(e.chosen_index), s["chosen_index"]);
    assert_eq!(e.speaker_id, format!("human:{sid}"));
    assert_eq!(e.listener_id, "rule");
    assert_eq!(e.text, "the ball closest to you");
    assert!(e.durations_ms.speak.is_some() && e.durations_ms.select.is_none());
    assert!(e.ast.is_some());
    assert_eq!(e.session_id.as_deref(), Some(sid.as_str()));

    let (status, again) = f.client.post(
        &format!("/api/sessions/{sid}/speak"),
        json!({ "scene_id": scene_id, "text": "the left ball" }),
    );
    assert_eq!((status, error_code(&again)), (409, "already_submitted"));

    let (_, info) = f.client.get(&format!("/api/sessions/{sid}"));
    assert_eq!(info["episode_ids"], json!([e.episode_id]));
    assert_eq!(info["accuracy"].as_f64().unwrap(), e.success as f64);
}

#[test]
fn listener_flow_scene_then_selection_writes_one_episode() {
    let f = Fixture::new(common::small_config());
    let (sid, queue) = f.session("listener");
    let scene_id = &queue[1];
    let scene = f.scene(scene_id);

    let (status, _) = f.client.get(&format!("/api/scenes/{scene_id}"));
    assert_eq!(status, 200);
    let (status, r) = f.client.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    assert_eq!(status, 200, "{r}");
    assert!(r["observation_url"].as_str().unwrap().contains("role=listener"));
    let text = r["text"].as_str().unwrap().to_string();
    assert!(!text.is_empty());

    let (status, s) = f.client.post(
        &format!("/api/sessions/{sid}/select"),
        json!({ "scene_id": scene_id, "click": f.click_on(&scene, scene.target_index) }),
    );
    assert_eq!(status, 200, "{s}");
    assert_eq!(s["chosen_index"], json!(scene.target_index));
    assert!(s["t_submit"].as_f64().unwrap() > r["t_reveal"].as_f64().unwrap());

    let eps = f.episodes();
    assert_eq!(eps.len(), 1);
    assert_eq!(eps[0].listener_id, format!("human:{sid}"));
    assert_eq!(eps[0].speaker_id, "oracle");
    assert_eq!(eps[0].text, text);
    assert_eq!(eps[0].success, 1);
    assert!(eps[0].durations_ms.select.is_some());

    let (_, info) = f.client.get(&format!("/api/sessions/{sid}"));
    assert_eq!(info["accuracy"].as_f64(), Some(1.0));
}

#[test]
fn served_pngs_match_offline_renders() {
    let f = Fixture::new(common::small_config());
    let ds = f.dataset();
    for s in ds.scenes().iter().take(3) {
        for (role, name) in [(Role::Speaker, "speaker"), (Role::Listener, "listener")] {
            for (w, h) in [(64, 48), (f.cfg.render_width, f.cfg.render_height)] {
                let (status, png) = f.client.get_bytes(&format!("/api/scenes/{}/observation?role={name}&w={w}&h={h}", s.scene_id));
                assert_eq!(status, 200);
                let offline = render_observation(s, role, &RenderConfig::with_size(w, h)).to_png().unwrap();
                assert_eq!(png, offline, "{} {name} {w}x{h}", s.scene_id);
            }
        }
    }
}

#[test]
fn malformed_requests_get_machine_readable_4xx() {
    let f = Fixture::new(common::small_config());
    let c = &f.client;
    let (sid, queue) = f.session("listener");
    let (spk, _) = f.session("speaker");
    let scene_id = queue[0].clone();
    let other = f
        .dataset()
        .split("train")
        .unwrap()
        .scene_ids
        .first()
        .cloned()
        .unwrap();

    let cases: Vec<((u16, Value), u16, &str)> = vec![
        (c.post_raw("/api/sessions", "{not json"), 400, "malformed_body"),
        (c.post("/api/sessions", json!({ "role": "judge" })), 400, "malformed_body"),
        (c.post("/api/sessions", json!({ "role": "speaker", "extra": 1 })), 400, "malformed_body"),
        (c.get("/api/scenes/nope"), 404, "scene_not_found"),
        (c.get(&format!("/api/scenes/{scene_id}/observation?role=ghost")), 400, "invalid_role"),
        (c.get(&format!("/api/scenes/{scene_id}/observation?w=0")), 422, "invalid_size"),
        (c.get(&format!("/api/scenes/{scene_id}/observation?h=99999")), 422, "invalid_size"),
        (c.get("/api/sessions/session-99"), 404, "session_not_found"),
        (
            c.post("/api/sessions/session-99/reveal", json!({ "scene_id": scene_id })),
            404,
            "session_not_found",
        ),
        (
            c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": other })),
            409,
            "scene_not_assigned",
        ),
        (
            c.post(&format!("/api/sessions/{sid}/select"), json!({ "scene_id": scene_id, "click": {"u": 0.5, "v": 0.5} })),
            409,
            "not_revealed",
        ),
        (
            c.post(&format!("/api/sessions/{sid}/reveal?seed=x"), json!({ "scene_id": scene_id })),
            400,
            "invalid_seed",
        ),
        (c.get("/api/elsewhere"), 404, "not_found"),
    ];
    for (i, ((status, body), want_status, want_code)) in cases.into_iter().enumerate() {
        assert_eq!((status, error_code(&body)), (want_status, want_code), "case {i}: {body}");
        assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    }

    let (status, _) = c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    assert_eq!(status, 200);
    let (status, body) = c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    assert_eq!((status, error_code(&body)), (409, "already_revealed"));
    for click in [json!({"u": 1.2, "v": 0.5}), json!({"u": 0.5, "v": -0.01})] {
        let (status, body) = c.post(&format!("/api/sessions/{sid}/select"), json!({ "scene_id": scene_id, "click": click }));
        assert_eq!((status, error_code(&body)), (422, "click_out_of_bounds"));
    }
    let (status, body) = c.post(&format!("/api/sessions/{sid}/speak"), json!({ "scene_id": scene_id, "text": "x" }));
    assert_eq!((status, error_code(&body)), (409, "wrong_role"));
    let (status, body) = c.post(&format!("/api/sessions/{spk}/speak"), json!({ "scene_id": scene_id, "text": "  " }));
    assert_eq!((status, error_code(&body)), (422, "empty_text"));
    assert!(f.episodes().is_empty(), "rejected requests never write episodes");

    // The click was refused, so the scene can still be answered.
    let (status, _) = c.post(
        &format!("/api/sessions/{sid}/select"),
        json!({ "scene_id": scene_id, "click": {"u": 0.5, "v": 0.5} }),
    );
    assert_eq!(status, 200);
    assert_eq!(f.episodes().len(), 1);
}

#[test]
fn two_sessions_on_the_same_scene_write_independent_episodes() {
    let f = Fixture::new(whole_test_split());
    let (a, queue) = f.session("listener");
    let (b, _) = f.session("listener");
    let scene_id = queue[0].clone();
    let scene = f.scene(&scene_id);
    for s in [&a, &b] {
        let (status, _) = f.client.post(&format!("/api/sessions/{s}/reveal"), json!({ "scene_id": scene_id }));
        assert_eq!(status, 200);
    }
    let clicks = [f.click_on(&scene, 0), f.click_on(&scene, 2)];
    let results: Vec<Value> = std::thread::scope(|sc| {
        let hs: Vec<_> = [&a, &b]
            .into_iter()
            .zip(clicks)
            .map(|(s, click)| {
                let client = Client::new(&f.client.base);
                let scene_id = scene_id.clone();
                sc.spawn(move || {
                    let (status, v) =
                        client.post(&format!("/api/sessions/{s}/select"), json!({ "scene_id": scene_id, "click": click }));
                    assert_eq!(status, 200, "{v}");
                    v
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let eps = f.episodes();
    assert_eq!(eps.len(), 2);
    assert_ne!(eps[0].episode_id, eps[1].episode_id);
    let by_session = |s: &str| eps.iter().find(|e| e.listener_id == format!("human:{s}")).unwrap();
    assert_eq!(by_session(&a).chosen_index, 0);
    assert_eq!(by_session(&b).chosen_index, 2);
    assert_eq!(results[0]["chosen_index"], json!(0));
    assert_eq!(results[1]["chosen_index"], json!(2));
}

#[test]
fn human_utterances_are_judged_by_listener_sessions() {
    let f = Fixture::new(whole_test_split());
    let (spk, queue) = f.session("speaker");
    let scene_id = queue[0].clone();
    let scene = f.scene(&scene_id);
    f.client.post(&format!("/api/sessions/{spk}/reveal"), json!({ "scene_id": scene_id }));
    let text = "the ball to the left of the chair";
    let (status, _) = f.client.post(&format!("/api/sessions/{spk}/speak"), json!({ "scene_id": scene_id, "text": text }));
    assert_eq!(status, 200);

    // The default of three judgments, then the oracle takes over again.
    let mut prompts = Vec::new();
    for i in 0..4 {
        let (sid, _) = f.session("listener");
        let (_, r) = f.client.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
        prompts.push(r["text"].as_str().unwrap().to_string());
        let pick = if i == 0 { scene.target_index } else { (scene.target_index + 1) % 3 };
        let (status, _) = f.client.post(
            &format!("/api/sessions/{sid}/select"),
            json!({ "scene_id": scene_id, "click": f.click_on(&scene, pick) }),
        );
        assert_eq!(status, 200);
    }
    assert_eq!(&prompts[..3], &[text, text, text]);
    assert_ne!(prompts[3], text);

    let judged = embref_platform::judgments::aggregate_judgments(&f.episodes(), 3);
    assert_eq!(judged.len(), 1);
    assert_eq!(judged[0].text, text);
    assert_eq!(judged[0].label.success, 0, "two of three judges missed");
}

#[test]
fn pending_judgments_survive_a_restart() {
    let cfg = whole_test_split();
    let dir = tempfile::tempdir().unwrap();
    let ds = common::write_small_dataset(dir.path(), &cfg);
    let log_path = ds.episodes_path();
    let scene_id = ds.split("test").unwrap().scene_ids[0].clone();
    {
        let c = Client::new(&common::spawn(&cfg, ds, &log_path));
        let (_, v) = c.post("/api/sessions", json!({ "role": "speaker" }));
        let sid = v["session_id"].as_str().unwrap();
        c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
        let (status, _) = c.post(&format!("/api/sessions/{sid}/speak"), json!({ "scene_id": scene_id, "text": "the far ball" }));
        assert_eq!(status, 200);
    }
    let c = Client::new(&common::spawn(&cfg, Dataset::load(dir.path()).unwrap(), &log_path));
    let (_, v) = c.post("/api/sessions", json!({ "role": "listener" }));
    let sid = v["session_id"].as_str().unwrap();
    let (_, r) = c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    assert_eq!(r["text"], json!("the far ball"));
}

#[test]
fn store_write_failure_is_a_5xx_without_a_partial_episode() {
    let cfg = common::small_config();
    let dir = tempfile::tempdir().unwrap();
    let ds = common::write_small_dataset(dir.path(), &cfg);
    let c = Client::new(&common::spawn(&cfg, ds, Path::new("/dev/full")));
    let (_, v) = c.post("/api/sessions", json!({ "role": "listener" }));
    let sid = v["session_id"].as_str().unwrap().to_string();
    let scene_id = v["scene_queue"][0].as_str().unwrap().to_string();
    c.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
    for _ in 0..2 {
        let (status, body) = c.post(
            &format!("/api/sessions/{sid}/select"),
            json!({ "scene_id": scene_id, "click": {"u": 0.5, "v": 0.5} }),
        );
        // A failed write leaves the scene open, so the retry fails the same way.
        assert_eq!((status, error_code(&body)), (500, "store_write_failed"));
    }
    let (_, info) = c.get(&format!("/api/sessions/{sid}"));
    assert_eq!(info["episode_ids"], json!([]));
    assert!(!dir.path().join("episodes.jsonl").exists());
}

#[test]
fn report_is_idempotent_and_matches_the_offline_report() {
    let f = Fixture::new(whole_test_split());
    let (sid, queue) = f.session("listener");
    for scene_id in queue.iter().take(3) {
        f.client.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
        let (status, _) = f.client.post(
            &format!("/api/sessions/{sid}/select"),
            json!({ "scene_id": scene_id, "click": {"u": 0.5, "v": 0.6} }),
        );
        assert_eq!(status, 200);
    }
    let (s1, r1) = f.client.get("/api/report");
    let (s2, r2) = f.client.get("/api/report");
    assert_eq!((s1, s2), (200, 200));
    assert_eq!(r1, r2);
    assert_eq!(r1["episodes"], json!(3));
    let ds = f.dataset();
    let offline = report_from_store(&ds, &f.episodes(), |s| agent_view(s, Role::Listener));
    assert_eq!(r1, serde_json::to_value(&offline).unwrap());
}

#[test]
fn timing_is_monotone_within_a_session() {
    let f = Fixture::new(whole_test_split());
    let (sid, queue) = f.session("speaker");
    let mut last = 0.0;
    for scene_id in &queue {
        let (_, r) = f.client.post(&format!("/api/sessions/{sid}/reveal"), json!({ "scene_id": scene_id }));
        let t_reveal = r["t_reveal"].as_f64().unwrap();
        let (_, s) = f.client.post(&format!("/api/sessions/{sid}/speak"), json!({ "scene_id": scene_id, "text": "the red ball" }));
        let t_submit = s["t_submit"].as_f64().unwrap();
        assert!(last < t_reveal && t_reveal < t_submit);
        assert!((s["duration_ms"].as_f64().unwrap() - (t_submit - t_reveal)).abs() < 1e-3);
        last = t_submit;
    }
}

#[test]
fn sessions_with_a_seed_get_reproducible_queues() {
    let f = Fixture::new(common::small_config());
    let (_, a) = f.client.post("/api/sessions", json!({ "role": "speaker", "seed": 5 }));
    let (_, b) = f.client.post("/api/sessions", json!({ "role": "listener", "seed": 5 }));
    assert_eq!(a["scene_queue"], b["scene_queue"]);
    assert_ne!(a["session_id"], b["session_id"]);
}
