//! HTTP session API for human-in-the-loop campaigns.
//!
//! Every mutation is appended to a per-session JSONL event log before the
//! response is sent; on startup the logs are replayed to rebuild beliefs.
//! Replay re-runs the sampler refreshes (seeded, so exact) but reuses the
//! logged proposals instead of re-optimizing.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use symdisc_core::designer::{Campaign, Proposal};
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::harness::seeded_problem;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self { status, error: error.into(), field: None }
    }

    fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session with id '{id}'"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let field = e.field().map(str::to_string);
        Self { status: StatusCode::BAD_REQUEST, error: e.to_string(), field }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.field {
            Some(f) => json!({ "error": self.error, "field": f }),
            None => json!({ "error": self.error }),
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingProposal,
    AwaitingObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub score: f64,
    pub model_probs: Vec<f64>,
    pub per_param_variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { config: ExperimentConfig, at: u64 },
    Proposed { x: Vec<f64>, score: f64, round: usize, at: u64 },
    Observed { y: f64, at: u64 },
}

pub struct Session {
    id: Uuid,
    config: ExperimentConfig,
    campaign: Campaign,
    history: Vec<RoundSummary>,
    initial_probs: Vec<f64>,
    initial_variances: Vec<f64>,
    created_at: u64,
    updated_at: u64,
    log: Option<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Session {
    fn create(id: Uuid, config: ExperimentConfig, at: u64, log: Option<PathBuf>) -> Result<Self, ApiError> {
        if config.truth.is_some() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "oracle not allowed in sessions").with_field("truth"));
        }
        let exp = config.build()?;
        let problem = seeded_problem(&exp.problem, config.seed);
        let campaign = Campaign::new(problem).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let belief = campaign.belief();
        Ok(Self {
            id,
            initial_probs: belief.model_probs.clone(),
            initial_variances: belief.per_param_variances(),
            config,
            campaign,
            history: Vec::new(),
            created_at: at,
            updated_at: at,
            log,
        })
    }

    pub fn phase(&self) -> Phase {
        if self.campaign.pending().is_some() {
            Phase::AwaitingObservation
        } else {
            Phase::AwaitingProposal
        }
    }

    fn append(&self, event: &Event) -> Result<(), ApiError> {
        let Some(path) = &self.log else { return Ok(()) };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(ApiError::internal)?;
        let line = serde_json::to_string(event).map_err(ApiError::internal)?;
        writeln!(f, "{line}").and_then(|_| f.sync_data()).map_err(ApiError::internal)
    }

    fn propose(&mut self) -> Result<Proposal, ApiError> {
        if let Some(p) = self.campaign.pending() {
            return Ok(p.clone());
        }
        let p = self.campaign.propose().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        self.updated_at = now();
        self.append(&Event::Proposed { x: p.x.clone(), score: p.score, round: p.round, at: self.updated_at })?;
        Ok(p)
    }

    fn apply_observation(&mut self, y: f64) -> Result<(), ApiError> {
        let pending = self
            .campaign
            .pending()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no pending proposal; call propose first"))?;
        if !y.is_finite() {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("y must be finite, got {y}")).with_field("y"));
        }
        let belief = self.campaign.observe(y).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        self.history.push(RoundSummary {
            round: belief.round,
            x: pending.x,
            y,
            score: pending.score,
            model_probs: belief.model_probs.clone(),
            per_param_variance: belief.per_param_variances(),
        });
        Ok(())
    }

    fn observe(&mut self, y: f64) -> Result<(), ApiError> {
        self.apply_observation(y)?;
        self.updated_at = now();
        self.append(&Event::Observed { y, at: self.updated_at })
    }

    fn model_names(&self) -> Vec<&str> {
        self.config.models.iter().map(|m| m.name.as_str()).collect()
    }

    fn current(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.campaign.belief();
        (b.model_probs.clone(), b.per_param_variances())
    }

    pub fn summary(&self) -> Value {
        let (p, v) = self.current();
        json!({
            "id": self.id.to_string(),
            "phase": self.phase(),
            "round": self.campaign.belief().round,
            "model_names": self.model_names(),
            "model_probs": p,
            "per_param_variance": v,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        })
    }

    pub fn state(&self) -> Value {
        let mut s = self.summary();
        let pending = self.campaign.pending().map(|p| proposal_body(p, &self.config.inputs));
        s["inputs"] = json!(self.config.inputs);
        s["initial"] = json!({ "model_probs": self.initial_probs, "per_param_variance": self.initial_variances });
        s["history"] = json!(self.history);
        s["pending"] = json!(pending);
        s["config"] = json!(self.config);
        s
    }

    /// Rebuilds a session from its event log.
    fn replay(path: &Path) -> io::Result<Self> {
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {m}", path.display()));
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| Uuid::parse_str(s).ok())
            .ok_or_else(|| bad("file name is not a session id".into()))?;
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| bad("empty log".into()))??;
        let Event::Created { config, at } = serde_json::from_str(&first).map_err(|e| bad(e.to_string()))? else {
            return Err(bad("log does not start with a creation event".into()));
        };
        let mut s = Self::create(id, config, at, Some(path.to_path_buf())).map_err(|e| bad(e.error))?;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| bad(e.to_string()))? {
                Event::Created { .. } => return Err(bad("duplicate creation event".into())),
                Event::Proposed { x, score, round, at } => {
                    s.campaign.restore_pending(Proposal { x, score, round }).map_err(|e| bad(e.to_string()))?;
                    s.updated_at = at;
                }
                Event::Observed { y, at } => {
                    s.apply_observation(y).map_err(|e| bad(e.error))?;
                    s.updated_at = at;
                }
            }
        }
        Ok(s)
    }
}

fn proposal_body(p: &Proposal, inputs: &[String]) -> Value {
    json!({ "x_star": p.x, "inputs": inputs, "score": p.score, "round": p.round })
}

type Shared = Arc<Mutex<Session>>;

/// Session registry. Each session has its own lock; the map lock is held
/// only for lookups and inserts.
pub struct AppState {
    sessions: RwLock<HashMap<Uuid, Shared>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    /// In-memory registry (nothing persisted).
    pub fn in_memory() -> Self {
        Self { sessions: RwLock::new(HashMap::new()), data_dir: None }
    }

    /// Registry persisted under `dir`; existing session logs are replayed.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            match Session::replay(&p) {
                Ok(s) => {
                    sessions.insert(s.id, Arc::new(Mutex::new(s)));
                }
                Err(e) => log::error!("skipping session log: {e}"),
            }
        }
        log::info!("restored {} sessions from {}", sessions.len(), dir.display());
        Ok(Self { sessions: RwLock::new(sessions), data_dir: Some(dir) })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        self.sessions.read().unwrap().get(&uuid).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/propose", post(propose))
        .route("/sessions/{id}/observe", post(observe))
        .route("/sessions/{id}/state", get(get_state))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn create_session(State(app): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let raw: Value = serde_json::from_str(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("body is not valid JSON: {e}")))?;
    if raw.get("truth").is_some() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "oracle not allowed in sessions").with_field("truth"));
    }
    let config = parse_config(&body)?;
    let id = Uuid::new_v4();
    let log = app.data_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")));
    let at = now();
    let session = blocking(move || -> Result<Session, ApiError> {
        let s = Session::create(id, config.clone(), at, log)?;
        s.append(&Event::Created { config, at })?;
        Ok(s)
    })
    .await??;
    let body = session.summary();
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let s = app.get(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.summary()))
}

async fn get_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let s = app.get(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.state()))
}

async fn propose(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let s = app.get(&id)?;
    let mut guard = s.lock_owned().await;
    blocking(move || {
        let p = guard.propose()?;
        Ok(Json(proposal_body(&p, &guard.config.inputs)))
    })
    .await?
}

#[derive(Debug, Deserialize)]
struct ObserveBody {
    y: Value,
}

fn parse_y(v: &Value) -> Result<f64, ApiError> {
    let y = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    let y = y.ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "y must be a number").with_field("y"))?;
    if !y.is_finite() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("y must be finite, got {y}")).with_field("y"));
    }
    Ok(y)
}

async fn observe(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ObserveBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let s = app.get(&id)?;
    let mut guard = s.lock_owned().await;
    if guard.phase() != Phase::AwaitingObservation {
        return Err(ApiError::new(StatusCode::CONFLICT, "no pending proposal; call propose first"));
    }
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()).with_field("y"))?;
    let y = parse_y(&body.y)?;
    blocking(move || {
        guard.observe(y)?;
        let (p, v) = guard.current();
        Ok(Json(json!({ "round": guard.campaign.belief().round, "model_probs": p, "per_param_variance": v })))
    })
    .await?
}
