use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use pushgrasp::eval::EvalReport;
use pushgrasp::files::{load_encoder, read_json};
use pushgrasp::train::{MetricsRecord, RunManifest};
use pushgrasp_core::policy::CaePretrainReport;

fn pushgrasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushgrasp")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(pushgrasp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pushgrasp(&["train", "--workers", "many"]).status.code(), Some(1));
    assert_eq!(pushgrasp(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoints_exit_2_naming_the_path() {
    for args in [
        vec!["serve", "--port", "0", "--policy", "/no/such/policy.json"],
        vec!["eval", "--policy", "/no/such/policy.json"],
        vec!["train", "--encoder", "/no/such/policy.json", "--out", "/tmp/pushgrasp-never"],
    ] {
        let out = pushgrasp(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/policy.json"));
    }
}

#[test]
fn pretrain_train_eval_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cae = dir.path().join("cae");
    let out = pushgrasp(&["pretrain-cae", "--num-images", "100", "--epochs", "1", "--seed", "3", "--out", p(&cae)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: CaePretrainReport = read_json(&cae.join("cae_report.json")).unwrap();
    assert_eq!(report.num_images, 100);
    assert_eq!(report.seed, 3);
    assert!(report.final_loss.is_finite());
    let (encoder, _) = load_encoder(&cae.join("encoder.json")).unwrap();

    // Same seed, same encoder.
    let again = dir.path().join("cae2");
    assert!(pushgrasp(&["pretrain-cae", "--num-images", "100", "--epochs", "1", "--seed", "3", "--out", p(&again)])
        .status
        .success());
    assert_eq!(load_encoder(&again.join("encoder.json")).unwrap().0, encoder);

    let train = dir.path().join("train");
    let config = dir.path().join("train.json");
    std::fs::write(&config, r#"{ "rollouts_per_iteration": 8, "policy": { "batch_size": 8 } }"#).unwrap();
    let out = pushgrasp(&[
        "train",
        "--encoder",
        p(&cae.join("encoder.json")),
        "--config",
        p(&config),
        "--iterations",
        "3",
        "--workers",
        "2",
        "--out",
        p(&train),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: RunManifest = read_json(&train.join("run.json")).unwrap();
    assert_eq!(manifest.config.iterations, 3);
    assert_eq!(manifest.config.rollouts_per_iteration, 8);
    assert_eq!(manifest.config.policy.batch_size, 8);
    assert_eq!(manifest.encoder_report.num_images, 100);
    let metrics: Vec<MetricsRecord> = std::fs::read_to_string(train.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(metrics.len(), 3);
    assert_eq!(metrics.last().unwrap().episodes, 24);

    // Extend the run by two iterations.
    let out = pushgrasp(&["train", "--resume", "--iterations", "5", "--out", p(&train)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(train.join("metrics.jsonl")).unwrap();
    let metrics: Vec<MetricsRecord> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(metrics.iter().map(|m| m.iteration).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    // One version per optimizer step, `updates_per_iteration` steps per iteration.
    let steps = manifest.config.policy.updates_per_iteration as u64;
    assert!(metrics.windows(2).all(|w| w[1].policy_version == w[0].policy_version + steps));

    let report = dir.path().join("eval.json");
    let out = pushgrasp(&["eval", "--policy", p(&train.join("policy.json")), "--scenes", "1", "--out", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: EvalReport = read_json(&report).unwrap();
    assert_eq!(r.scenes, 1);
    assert_eq!(r.per_scene.len(), 1);
    assert!(r.mean_sim_time > 0.0);
    assert_eq!(r.diversity.scenes, 1);
}

#[test]
fn serve_answers_health_and_logs_episodes() {
    let data = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_pushgrasp"))
        .args(["serve", "--port", &port.to_string()])
        .env("PUSHGRASP_DATA_DIR", data.path())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let result = rt.block_on(async {
        let client = reqwest::Client::new();
        let base = format!("http://127.0.0.1:{port}");
        let mut health = None;
        for _ in 0..100 {
            if let Ok(r) = client.get(format!("{base}/health")).send().await {
                health = Some(r.status().as_u16());
                break;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        let s: serde_json::Value =
            client.post(format!("{base}/sessions")).json(&serde_json::json!({ "seed": 4 })).send().await?.json().await?;
        let id = s["id"].as_u64().unwrap();
        client
            .post(format!("{base}/sessions/{id}/target"))
            .json(&serde_json::json!({ "x": 0.5, "y": 0.3 }))
            .send()
            .await?;
        let r = client
            .post(format!("{base}/sessions/{id}/manual"))
            .json(&serde_json::json!({ "direction": "left" }))
            .send()
            .await?;
        Ok::<_, reqwest::Error>((health, r.status().as_u16(), id))
    });
    child.kill().unwrap();
    child.wait().unwrap();
    let (health, manual, id) = result.unwrap();
    assert_eq!(health, Some(200));
    assert_eq!(manual, 200);
    let log = std::fs::read_to_string(data.path().join(format!("session-{id}.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 1);
}
