mod common;

use std::sync::Arc;

use common::{quick_policy, spawn_server, HttpApi};
use futures::StreamExt;
use pushgrasp::files::pgm_to_depth;
use pushgrasp::service::{Service, ServiceConfig};
use pushgrasp_core::sim::{randomize_scene, render_depth, RandomizationConfig, DEPTH_COLS, DEPTH_ROWS};
use reqwest::Method;
use serde_json::{json, Value};

fn server(policy: bool, data_dir: Option<std::path::PathBuf>) -> (Arc<Service>, HttpApi) {
    let svc = Arc::new(Service::new(
        ServiceConfig { data_dir, ..ServiceConfig::default() },
        policy.then(|| quick_policy(3)),
    ));
    let addr = spawn_server(svc.clone());
    (svc, HttpApi::new(addr))
}

fn target_click(session: &Value) -> Value {
    let objects = session["scene"]["objects"].as_array().unwrap();
    let t = objects.iter().find(|o| o["is_target"] == json!(true)).unwrap();
    json!({ "x": t["center"]["x"], "y": t["center"]["y"] })
}

#[test]
fn health_reports_policy() {
    let (_, api) = server(false, None);
    let (status, body) = api.call(Method::GET, "/health", None);
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["policy_loaded"], false);
}

#[test]
fn full_command_flow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (_, api) = server(true, Some(dir.path().to_path_buf()));

    let (status, s) = api.call(Method::POST, "/sessions", Some(json!({ "seed": 21 })));
    assert_eq!(status, 201);
    assert_eq!(s["state"], "IDLE");
    let id = s["id"].as_u64().unwrap();
    let base = format!("/sessions/{id}");

    // Candidates before a target is chosen are refused.
    let (status, _) = api.call(Method::POST, &format!("{base}/candidates"), Some(json!({ "k": 4 })));
    assert_eq!(status, 409);

    let (status, s) = api.call(Method::POST, &format!("{base}/target"), Some(target_click(&s)));
    assert_eq!(status, 200);
    assert_eq!(s["state"], "TARGET_SELECTED");
    let target = s["target_id"].as_u64().unwrap();
    let objects = s["scene"]["objects"].as_array().unwrap();
    assert_eq!(objects.iter().find(|o| o["id"] == json!(target)).unwrap()["is_target"], true);

    let (status, s) = api.call(Method::POST, &format!("{base}/candidates"), Some(json!({ "k": 4 })));
    assert_eq!(status, 200);
    assert_eq!(s["state"], "CANDIDATES_READY");
    let cands = s["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 4);
    let scores: Vec<f64> = cands.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "candidates are ranked");
    assert!(cands.iter().all(|c| c["path"].as_array().unwrap().len() > 1));

    let (status, _) = api.call(Method::POST, &format!("{base}/execute"), Some(json!({ "candidate_id": 99 })));
    assert_eq!(status, 404);

    let best = cands[0]["id"].clone();
    let (status, r) = api.call(Method::POST, &format!("{base}/execute"), Some(json!({ "candidate_id": best })));
    assert_eq!(status, 200);
    assert_eq!(r["episode"]["mode"], "rearrange");
    assert_eq!(r["episode"]["outcome"]["kind"], "executed");
    let state = r["session"]["state"].as_str().unwrap().to_owned();
    assert!(state == "TARGET_SELECTED" || state == "FAILED", "{state}");
    assert!(r["session"]["candidates"].as_array().unwrap().is_empty());

    if state == "TARGET_SELECTED" {
        let (status, r) = api.call(Method::POST, &format!("{base}/manual"), Some(json!({ "direction": "forward" })));
        assert_eq!(status, 200);
        assert_eq!(r["episode"]["mode"], "manual");
        let (status, r) = api.call(Method::POST, &format!("{base}/grasp"), None);
        assert_eq!(status, 200);
        let kind = r["episode"]["outcome"]["kind"].as_str().unwrap();
        assert!(kind == "grasped" || kind == "blocked");
    }

    let (status, s) = api.call(Method::GET, &base, None);
    assert_eq!(status, 200);
    let episodes = s["episodes"].as_u64().unwrap() as usize;
    assert!(episodes >= 1);

    // Every episode was appended to the session's log as it happened.
    let log = std::fs::read_to_string(dir.path().join(format!("session-{id}.jsonl"))).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), episodes);
    assert!(lines.iter().enumerate().all(|(i, l)| l["index"] == json!(i) && l["session_id"] == json!(id)));
}

#[test]
fn depth_is_a_sixteen_bit_pgm_of_the_rendered_scene() {
    let (_, api) = server(false, None);
    let (_, s) = api.call(Method::POST, "/sessions", Some(json!({ "seed": 8 })));
    let id = s["id"].as_u64().unwrap();
    let (status, bytes) = api.bytes(&format!("/sessions/{id}/depth"));
    assert_eq!(status, 200);
    let header = format!("P5\n{DEPTH_COLS} {DEPTH_ROWS}\n65535\n");
    assert!(bytes.starts_with(header.as_bytes()));
    assert_eq!(bytes.len(), header.len() + 2 * DEPTH_COLS * DEPTH_ROWS);

    let scene = randomize_scene(8, &RandomizationConfig::default()).unwrap();
    let reference = render_depth(&scene);
    let decoded = pgm_to_depth(&bytes, reference.camera_height).unwrap();
    let quantum = reference.camera_height / 65535.0;
    for (a, b) in decoded.values.iter().zip(&reference.values) {
        assert!((a - b).abs() <= quantum, "{a} vs {b}");
    }
}

#[test]
fn clusters_cover_every_object() {
    let (_, api) = server(false, None);
    let (_, s) = api.call(Method::POST, "/sessions", Some(json!({ "seed": 13 })));
    let id = s["id"].as_u64().unwrap();
    let (status, clusters) = api.call(Method::GET, &format!("/sessions/{id}/clusters"), None);
    assert_eq!(status, 200);
    let clusters = clusters.as_array().unwrap();
    let objects = s["scene"]["objects"].as_array().unwrap();
    assert!(!clusters.is_empty());
    assert!(clusters.len() <= objects.len() + 1);
    for c in clusters {
        assert!(c["point_count"].as_u64().unwrap() > 0);
        assert!(c["centroid"]["z"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn error_statuses() {
    let (_, api) = server(false, None);
    assert_eq!(api.call(Method::GET, "/sessions/12345", None).0, 404);
    assert_eq!(api.call(Method::POST, "/sessions/12345/grasp", None).0, 404);

    let (_, s) = api.call(Method::POST, "/sessions", Some(json!({ "seed": 2 })));
    let id = s["id"].as_u64().unwrap();
    // Grasping before choosing a target is a state conflict.
    assert_eq!(api.call(Method::POST, &format!("/sessions/{id}/grasp"), None).0, 409);
    api.call(Method::POST, &format!("/sessions/{id}/target"), Some(target_click(&s)));
    // No policy loaded.
    let (status, body) = api.call(Method::POST, &format!("/sessions/{id}/candidates"), Some(json!({ "k": 4 })));
    assert_eq!(status, 503);
    assert!(body["error"].is_string());

    // A scene with a degenerate object is rejected.
    let mut doc = s["scene"].clone();
    doc["objects"][1]["radius"] = json!(-0.01);
    assert_eq!(api.call(Method::POST, "/sessions", Some(json!({ "scene": doc }))).0, 422);
}

#[test]
fn concurrent_sessions_are_independent() {
    let (_, api) = server(true, None);
    let base = api.base.clone();
    let script = |seed: u64| {
        let api = HttpApi::new(base.trim_start_matches("http://").parse().unwrap());
        let (_, s) = api.call(Method::POST, "/sessions", Some(json!({ "seed": seed })));
        let id = s["id"].as_u64().unwrap();
        api.call(Method::POST, &format!("/sessions/{id}/target"), Some(target_click(&s)));
        let (_, s) = api.call(Method::POST, &format!("/sessions/{id}/candidates"), Some(json!({ "k": 3 })));
        let c = s["candidates"][0]["id"].clone();
        let (_, r) = api.call(Method::POST, &format!("/sessions/{id}/execute"), Some(json!({ "candidate_id": c })));
        let mut scene = r["session"]["scene"].clone();
        scene["gripper"] = Value::Null;
        (s["candidates"].clone(), scene)
    };
    let alone = script(40);
    let together: Vec<_> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..4).map(|_| sc.spawn(|| script(40))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for t in together {
        assert_eq!(t, alone);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_reports_execution_progress() {
    let svc = Arc::new(Service::new(ServiceConfig::default(), Some(quick_policy(4))));
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(pushgrasp::server::serve(svc, "127.0.0.1:0".parse().unwrap(), move |a| tx.send(a).unwrap()));
    let addr = rx.await.unwrap();
    let client = reqwest::Client::new();
    let url = |p: &str| format!("http://{addr}{p}");

    let s: Value = client.post(url("/sessions")).json(&json!({ "seed": 5 })).send().await.unwrap().json().await.unwrap();
    let id = s["id"].as_u64().unwrap();
    client.post(url(&format!("/sessions/{id}/target"))).json(&target_click(&s)).send().await.unwrap();
    let s: Value =
        client.post(url(&format!("/sessions/{id}/candidates"))).json(&json!({ "k": 2 })).send().await.unwrap().json().await.unwrap();
    let cid = s["candidates"][0]["id"].clone();

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/stream")).await.unwrap();
    let resp = client.post(url(&format!("/sessions/{id}/execute"))).json(&json!({ "candidate_id": cid })).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let done: Value = resp.json().await.unwrap();
    let final_state = done["session"]["state"].clone();

    let mut events = Vec::new();
    while let Ok(Some(msg)) = tokio::time::timeout(std::time::Duration::from_secs(5), ws.next()).await {
        let msg = msg.unwrap();
        let ev: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        let last = ev["state"] == final_state && ev["tick"] == json!(0);
        events.push(ev);
        if last {
            break;
        }
    }
    assert!(events.len() >= 2, "progress plus the closing state event");
    for ev in &events {
        for key in ["tick", "gripper", "moved_objects", "fallen", "state"] {
            assert!(ev.get(key).is_some(), "event lacks {key}: {ev}");
        }
    }
    assert!(events.iter().any(|e| e["state"] == "EXECUTING"));
    assert_eq!(events.last().unwrap()["state"], final_state);
}
