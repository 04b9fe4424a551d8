mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use symdisc::config::parse_config;
use symdisc::harness::seeded_problem;
use symdisc::service::{router, AppState};
use symdisc_core::designer::Campaign;
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn create(app: &Router) -> String {
    let (s, v) = call(app, "POST", "/sessions", Some(common::small_config_text(false))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn probs_sum(v: &Value) -> f64 {
    v.as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum()
}

/// Uncorrelated stand-in for a human measurement.
fn fake_y(x: f64, round: usize) -> f64 {
    0.5 + 1.5 * x * x + 0.03 * (round as f64 - 1.0)
}

#[tokio::test]
async fn create_gives_uniform_prior() {
    let app = router(Arc::new(AppState::in_memory()));
    let id = create(&app).await;
    let (s, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "awaiting_proposal");
    assert_eq!(v["round"], 0);
    assert_eq!(v["model_probs"], json!([0.5, 0.5]));
}

#[tokio::test]
async fn create_rejects_oracle_and_bad_models() {
    let app = router(Arc::new(AppState::in_memory()));
    let (s, v) = call(&app, "POST", "/sessions", Some(common::small_config_text(true))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "oracle not allowed in sessions");
    assert_eq!(v["field"], "truth");

    let mut cfg = common::small_config(false);
    cfg["models"][0]["expression"] = "a + (b * x".into();
    let (s, v) = call(&app, "POST", "/sessions", Some(cfg.to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "models[0].expression");
    assert!(v["error"].as_str().unwrap().contains("line"), "{v}");

    let (s, v) = call(&app, "POST", "/sessions", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = router(Arc::new(AppState::in_memory()));
    for (m, p) in [
        ("GET", "/sessions/nope"),
        ("POST", "/sessions/00000000-0000-4000-8000-000000000000/propose"),
        ("GET", "/sessions/00000000-0000-4000-8000-000000000000/state"),
    ] {
        let (s, v) = call(&app, m, p, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{m} {p}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn phase_machine() {
    let app = router(Arc::new(AppState::in_memory()));
    let id = create(&app).await;
    let obs = format!("/sessions/{id}/observe");
    let prop = format!("/sessions/{id}/propose");

    let (s, _) = call(&app, "POST", &obs, Some(r#"{"y": 1.0}"#.into())).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, p1) = call(&app, "POST", &prop, None).await;
    assert_eq!(s, StatusCode::OK);
    let x = p1["x_star"][0].as_f64().unwrap();
    assert!((-2.0..=2.0).contains(&x));
    let (_, p2) = call(&app, "POST", &prop, None).await;
    assert_eq!(p1, p2);

    for bad in [r#"{"y": "NaN"}"#, r#"{"y": "inf"}"#, r#"{"y": "abc"}"#, r#"{"y": null}"#, r#"{}"#] {
        let (s, v) = call(&app, "POST", &obs, Some(bad.into())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}: {v}");
    }
    let (_, st) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st["phase"], "awaiting_observation");

    let (s, v) = call(&app, "POST", &obs, Some(format!(r#"{{"y": "{}"}}"#, fake_y(x, 1)))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["round"], 1);
    assert!((probs_sum(&v["model_probs"]) - 1.0).abs() < 1e-9);

    let (s, _) = call(&app, "POST", &obs, Some(r#"{"y": 1.0}"#.into())).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, p3) = call(&app, "POST", &prop, None).await;
    assert_eq!(p3["round"], 1);
    assert_ne!(p3["x_star"], p1["x_star"]);
}

async fn play(app: &Router, id: &str, rounds: usize) -> Vec<(Vec<f64>, f64)> {
    let mut transcript = Vec::new();
    for r in 1..=rounds {
        let (_, p) = call(app, "POST", &format!("/sessions/{id}/propose"), None).await;
        let x: Vec<f64> = serde_json::from_value(p["x_star"].clone()).unwrap();
        let y = fake_y(x[0], r);
        let (s, v) = call(app, "POST", &format!("/sessions/{id}/observe"), Some(json!({ "y": y }).to_string())).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        transcript.push((x, y));
    }
    transcript
}

#[tokio::test]
async fn state_matches_direct_replay() {
    let app = router(Arc::new(AppState::in_memory()));
    let id = create(&app).await;
    let transcript = play(&app, &id, 3).await;
    let (_, a) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (_, b) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(a, b);
    let history = a["history"].as_array().unwrap();
    assert_eq!(history.len(), 3);
    assert_eq!(a["config"]["models"][1]["name"], "quadratic");

    let exp = parse_config(&common::small_config_text(false)).unwrap().build().unwrap();
    let mut campaign = Campaign::new(seeded_problem(&exp.problem, exp.config.seed)).unwrap();
    assert_eq!(a["initial"]["model_probs"], json!(campaign.belief().model_probs));
    for (row, (x, y)) in history.iter().zip(&transcript) {
        let p = campaign.propose().unwrap();
        assert_eq!(&p.x, x);
        let belief = campaign.observe(*y).unwrap();
        assert_eq!(row["x"], json!(x));
        assert_eq!(row["y"], json!(y));
        assert_eq!(row["round"], json!(belief.round));
        assert_eq!(row["score"], json!(p.score));
        assert_eq!(row["model_probs"], json!(belief.model_probs));
        assert_eq!(row["per_param_variance"], json!(belief.per_param_variances()));
        assert!((probs_sum(&row["model_probs"]) - 1.0).abs() < 1e-9);
    }
}

#[tokio::test]
async fn likelihood_dominant_observation_raises_model() {
    let mut cfg = common::small_config(false);
    cfg["noise_sigma2"] = 1e-4.into();
    let app = router(Arc::new(AppState::in_memory()));
    let (_, v) = call(&app, "POST", "/sessions", Some(cfg.to_string())).await;
    let id = v["id"].as_str().unwrap();
    let (_, p) = call(&app, "POST", &format!("/sessions/{id}/propose"), None).await;
    let x = p["x_star"][0].as_f64().unwrap();
    // Prior predictive mean of the quadratic: a = 0, b = 1.
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/observe"), Some(json!({ "y": x * x }).to_string())).await;
    let probs = v["model_probs"].as_array().unwrap();
    assert!(probs[1].as_f64().unwrap() > 0.5, "{v}");
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::open(dir.path()).unwrap());
    let app = router(state);
    let id = create(&app).await;
    play(&app, &id, 2).await;
    let (_, pending) = call(&app, "POST", &format!("/sessions/{id}/propose"), None).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let other = create(&app).await;
    drop(app);

    let restored = Arc::new(AppState::open(dir.path()).unwrap());
    assert_eq!(restored.len(), 2);
    let app = router(restored);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["phase"], "awaiting_observation");
    let (_, again) = call(&app, "POST", &format!("/sessions/{id}/propose"), None).await;
    assert_eq!(pending, again);
    let (s, _) = call(&app, "GET", &format!("/sessions/{other}"), None).await;
    assert_eq!(s, StatusCode::OK);

    // Continuing after a restart matches continuing without one.
    let y = json!({ "y": 2.0 }).to_string();
    let (_, v1) = call(&app, "POST", &format!("/sessions/{id}/observe"), Some(y)).await;
    let exp = parse_config(&common::small_config_text(false)).unwrap().build().unwrap();
    let mut c = Campaign::new(seeded_problem(&exp.problem, exp.config.seed)).unwrap();
    for row in before["history"].as_array().unwrap() {
        c.propose().unwrap();
        c.observe(row["y"].as_f64().unwrap()).unwrap();
    }
    c.propose().unwrap();
    let b = c.observe(2.0).unwrap();
    assert_eq!(v1["model_probs"], json!(b.model_probs));
    assert_eq!(v1["per_param_variance"], json!(b.per_param_variances()));
}

#[tokio::test]
async fn concurrent_sessions_are_independent() {
    let app = router(Arc::new(AppState::in_memory()));
    let a = create(&app).await;
    let b = create(&app).await;
    let (ta, tb) = tokio::join!(play(&app, &a, 2), play(&app, &b, 2));
    assert_eq!(ta, tb);
    let (_, sa) = call(&app, "GET", &format!("/sessions/{a}/state"), None).await;
    let (_, sb) = call(&app, "GET", &format!("/sessions/{b}/state"), None).await;
    assert_eq!(sa["history"], sb["history"]);
}

#[tokio::test]
async fn session_reproduces_harness_trial_zero() {
    let exp = parse_config(&common::small_config_text(true)).unwrap().build().unwrap();
    let trace = symdisc::harness::run_trial(&exp, 0).unwrap();

    let app = router(Arc::new(AppState::in_memory()));
    let id = create(&app).await;
    for r in &trace.rounds {
        let (_, p) = call(&app, "POST", &format!("/sessions/{id}/propose"), None).await;
        assert_eq!(p["x_star"], json!(r.x));
        assert_eq!(p["score"], json!(r.score));
        let (_, v) = call(&app, "POST", &format!("/sessions/{id}/observe"), Some(json!({ "y": r.y }).to_string())).await;
        assert_eq!(v["model_probs"], json!(r.model_probs));
        assert_eq!(v["per_param_variance"], json!(r.variances));
    }
    let (_, st) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["history"].as_array().unwrap().len(), trace.rounds.len());
    assert_eq!(st["initial"]["per_param_variance"], json!(trace.initial_variances));
}
