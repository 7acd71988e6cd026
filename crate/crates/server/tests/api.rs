//! Endpoint behaviour through the router, without a socket.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vipguard_core::api::{ConfigSource, EvalResponse, ReportResponse, SweepResponse, TrainResponse};
use vipguard_core::env::{one_hot, AgentAction, WorldState};
use vipguard_core::{EntityKind, EntityState, Vec2, WorldConfig};
use vipguard_server::router;

async fn send(method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(path).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(path: &str, body: Value) -> (StatusCode, Value) {
    send("POST", path, Some(body)).await
}

fn ent(kind: EntityKind, x: f64, y: f64) -> EntityState {
    EntityState { kind, position: Vec2::new(x, y), velocity: Vec2::ZERO, radius: 0.05 }
}

/// VIP at the origin, a bodyguard at (0.3, 0) and two bystanders at distance ln 2.
fn two_halves() -> WorldState {
    let h = std::f64::consts::LN_2;
    WorldState::from_entities(
        vec![
            ent(EntityKind::Vip, 0.0, 0.0),
            ent(EntityKind::Bodyguard, 0.3, 0.0),
            ent(EntityKind::Bystander, 0.0, -h),
            ent(EntityKind::Bystander, -h, 0.0),
        ],
        4,
    )
}

const UNIT: &str = r#"{"a": 1.0, "b": 1.0, "safe_distance": 2.0}"#;

fn tiny_toml(episodes: usize) -> String {
    WorldConfig {
        train_episodes: episodes,
        n_bystanders: 4,
        batch_size: 4,
        hidden_sizes: vec![8],
        eval_episodes: 3,
        eval_interval: 2,
        checkpoint_interval: 3,
        ..WorldConfig::default()
    }
    .to_toml()
}

#[tokio::test]
async fn health_reports_ok() {
    let (status, body) = send("GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn unknown_route_is_a_json_404() {
    let (status, body) = send("GET", "/v1/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["kind"], "not_found");
}

#[tokio::test]
async fn malformed_body_is_rejected() {
    let (status, body) = post("/v1/threat", json!({"world": 3})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["kind"], "invalid_request");
}

#[tokio::test]
async fn config_resolves_overrides_and_hashes() {
    let src = ConfigSource { toml: String::new(), overrides: vec!["seed=7".into(), "reward_kind=\"ThreatOnly\"".into()] };
    let (status, body) = post("/v1/config", serde_json::to_value(&src).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let cfg: WorldConfig = serde_json::from_value(body["config"].clone()).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(body["hash"], cfg.hash());
}

#[tokio::test]
async fn invalid_config_names_the_field() {
    let (status, body) = post("/v1/config", json!({"overrides": ["n_bodyguards=0"]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["kind"], "config");
    assert!(body["message"].as_str().unwrap().contains("n_bodyguards"));
}

#[tokio::test]
async fn threat_of_two_half_threats_is_three_quarters() {
    let params: Value = serde_json::from_str(UNIT).unwrap();
    let (status, body) = post("/v1/threat", json!({"world": two_halves(), "params": params})).await;
    assert_eq!(status, StatusCode::OK);
    assert!((body["instantaneous"].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[tokio::test]
async fn total_threat_sums_and_rejects_empty() {
    let params: Value = serde_json::from_str(UNIT).unwrap();
    let traj = vec![two_halves(); 4];
    let (status, body) = post("/v1/total-threat", json!({"trajectory": traj, "params": params, "dt": 0.1})).await;
    assert_eq!(status, StatusCode::OK);
    assert!((body["total_threat"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    let (status, body) = post("/v1/total-threat", json!({"trajectory": [], "params": params, "dt": 0.1})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["kind"], "invalid_request");
}

#[tokio::test]
async fn comm_penalty_charges_speakers() {
    let params = json!({
        "threat": serde_json::from_str::<Value>(UNIT).unwrap(),
        "min_distance": 0.1, "band_distance": 0.5, "comm_penalty": 0.05, "threat_epsilon": 1e-9
    });
    let speaking = AgentAction { force: Vec2::ZERO, utterance: one_hot(2, 4) };
    let req = json!({"kind": "CommPenalty", "params": params, "world": two_halves(), "actions": [speaking]});
    let (status, body) = post("/v1/rewards", req).await;
    assert_eq!(status, StatusCode::OK);
    assert!((body["per_agent"][0]["total"].as_f64().unwrap() + 0.80).abs() < 1e-12);
    let req = json!({"kind": "CommPenalty", "params": params, "world": two_halves(), "actions": []});
    assert_eq!(post("/v1/rewards", req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn train_then_eval_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let (status, body) = post("/v1/train", json!({"config": {"toml": tiny_toml(5)}, "out_dir": out})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let trained: TrainResponse = serde_json::from_value(body).unwrap();
    assert_eq!(trained.episodes_completed, 5);
    assert_eq!(trained.final_eval_episode, 5);
    assert!(trained.baseline_total_threat.is_some());

    let req = json!({"checkpoint": out.join("checkpoint"), "episodes": 4});
    let (status, body) = post("/v1/eval", req.clone()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let eval: EvalResponse = serde_json::from_value(body).unwrap();
    assert_eq!(eval.records.len(), 4);
    assert_eq!(eval.trained_episodes, 5);
    assert!(eval.records.iter().all(|r| (0.0..=2.5).contains(&r.total_threat)));
    let again: EvalResponse = serde_json::from_value(post("/v1/eval", req).await.1).unwrap();
    assert_eq!(again, eval);
}

#[tokio::test]
async fn eval_of_missing_checkpoint_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (status, body) = post("/v1/eval", json!({"checkpoint": tmp.path().join("none"), "episodes": 2})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["kind"], "io");
}

#[tokio::test]
async fn sweep_then_report_from_its_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = format!(
        "output_dir = \"unused\"\nseeds = [0, 1]\n\n[axes]\nn_bodyguards = [2]\nreward_kind = [\"CommPenalty\", \"ThreatOnly\"]\nlearner_kind = [\"Maddpg\"]\ncommunication_enabled = [true]\n\n[base]\n{}",
        tiny_toml(2)
    );
    let out = tmp.path().join("sweep");
    let (status, body) = post("/v1/sweep", json!({"spec": spec, "jobs": 2, "output_dir": out})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let sweep: SweepResponse = serde_json::from_value(body).unwrap();
    assert_eq!(sweep.runs.len(), 4);
    assert_eq!(sweep.comparison.len(), 1);
    assert!(sweep.comparison[0].comm_penalty_le_threat_only.is_some());

    let (status, body) = post("/v1/report", json!({"in_dir": out.join("runs"), "out_dir": tmp.path().join("rep")})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: ReportResponse = serde_json::from_value(body).unwrap();
    assert_eq!(report.comparison, sweep.comparison);
    assert_eq!(
        std::fs::read(&report.files.summary).unwrap(),
        std::fs::read(&sweep.report.summary).unwrap(),
        "report over the run directories reproduces the sweep summary"
    );
}

#[tokio::test]
async fn bad_spec_and_zero_jobs_are_rejected() {
    let (status, body) = post("/v1/sweep", json!({"spec": "seeds = []", "jobs": 1})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["kind"], "spec");
    let (status, _) = post("/v1/sweep", json!({"spec": "", "jobs": 0})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
