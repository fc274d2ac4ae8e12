//! HTTP gateway over live sessions.
//!
//! Event bodies use the same JSON shape as `timeline.jsonl`. Responses to
//! non-admin callers never say which participants are human.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{AgentSpec, ReasoningEntry};
use crate::clock::ClockMode;
use crate::session::{Session, SessionConfig, SessionError, Status};
use crate::timeline::{Event, EventKind, Seq, TimelineError};
use crate::transcript::{self, Turn};

pub const ADMIN_TOKEN_ENV: &str = "COLLAB_ADMIN_TOKEN";
pub const BIND_ENV: &str = "COLLAB_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    admin_token: Option<String>,
    /// Where sessions created over HTTP export their artifacts on end.
    artifacts_dir: Option<PathBuf>,
}

impl Gateway {
    pub fn new(admin_token: Option<String>) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: RwLock::new(HashMap::new()),
                admin_token: admin_token.filter(|t| !t.is_empty()),
                artifacts_dir: None,
            }),
        }
    }

    pub fn from_env() -> Self {
        Self::new(std::env::var(ADMIN_TOKEN_ENV).ok())
    }

    pub fn with_artifacts_dir(self, dir: PathBuf) -> Self {
        let inner = Inner {
            sessions: RwLock::new(self.inner.sessions.read().expect("poisoned").clone()),
            admin_token: self.inner.admin_token.clone(),
            artifacts_dir: Some(dir),
        };
        Self {
            inner: Arc::new(inner),
        }
    }

    pub fn insert(&self, session: Arc<Session>) {
        self.inner
            .sessions
            .write()
            .expect("sessions poisoned")
            .insert(session.id().to_string(), session);
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.inner
            .sessions
            .read()
            .expect("sessions poisoned")
            .get(id)
            .cloned()
    }

    pub fn sessions(&self) -> Vec<Arc<Session>> {
        self.inner
            .sessions
            .read()
            .expect("sessions poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/sessions", post(create_session))
            .route("/sessions/{id}", get(get_session))
            .route("/sessions/{id}/events", get(get_events))
            .route("/sessions/{id}/stream", get(stream_events))
            .route("/sessions/{id}/messages", post(post_message))
            .route("/sessions/{id}/typing", post(post_typing))
            .route("/sessions/{id}/agents", get(list_agents).post(add_agent))
            .route("/sessions/{id}/agents/{name}/reasoning", get(get_reasoning))
            .route("/sessions/{id}/report", get(get_report))
            .with_state(self.clone())
    }

    fn is_admin(&self, headers: &HeaderMap) -> bool {
        let Some(token) = &self.inner.admin_token else {
            return false;
        };
        headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|given| given.trim() == token)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "admin token required")
    }

    fn no_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownParticipant(_) | SessionError::NotHuman(_) => {
                StatusCode::FORBIDDEN
            }
            SessionError::SessionEnded | SessionError::DuplicateName(_) => StatusCode::CONFLICT,
            SessionError::EmptyMessage | SessionError::Config(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SessionError::MissingApiKey(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Timeline(TimelineError::EmptyMessage) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lookup(gw: &Gateway, id: &str) -> ApiResult<Arc<Session>> {
    gw.session(id).ok_or_else(|| ApiError::no_session(id))
}

/// Participant as shown to non-admin callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicParticipant {
    pub name: String,
    pub role_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    #[serde(flatten)]
    pub status: Status,
    pub participants: Vec<PublicParticipant>,
    pub head: Seq,
}

fn api_session(s: &Session) -> ApiSession {
    ApiSession {
        session_id: s.id().to_string(),
        status: s.status(),
        participants: public_participants(s),
        head: s.timeline().head(),
    }
}

fn public_participants(s: &Session) -> Vec<PublicParticipant> {
    s.participants()
        .into_iter()
        .map(|p| PublicParticipant {
            name: p.name,
            role_name: p.role_name,
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    #[serde(default)]
    id: Option<String>,
    config: SessionConfig,
    #[serde(default)]
    scripted: bool,
}

async fn create_session(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(body): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<ApiSession>)> {
    if !gw.is_admin(&headers) {
        return Err(ApiError::unauthorized());
    }
    let id = body
        .id
        .unwrap_or_else(|| format!("s{}", gw.sessions().len() + 1));
    if gw.session(&id).is_some() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("session `{id}` exists"),
        ));
    }
    let session = Session::builder(body.config)
        .scripted(body.scripted)
        .clock_mode(ClockMode::Real)
        .id(&id)
        .build()?;
    gw.insert(Arc::clone(&session));
    spawn_driver(&gw, Arc::clone(&session));
    Ok((StatusCode::CREATED, Json(api_session(&session))))
}

/// Runs the session in the background and exports artifacts when it ends.
pub fn spawn_driver(gw: &Gateway, session: Arc<Session>) -> tokio::task::JoinHandle<()> {
    let out = gw.inner.artifacts_dir.clone().map(|d| d.join(session.id()));
    tokio::spawn(async move {
        if let Err(e) = session.run().await {
            tracing::warn!(session = session.id(), "session ended: {e}");
        }
        if let Some(dir) = out {
            if let Err(e) = session.export(&dir) {
                tracing::warn!(session = session.id(), "export failed: {e}");
            }
        }
    })
}

async fn get_session(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
) -> ApiResult<Json<ApiSession>> {
    let s = lookup(&gw, &id)?;
    Ok(Json(api_session(&s)))
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: Seq,
}

async fn get_events(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> ApiResult<Json<Vec<Event>>> {
    let s = lookup(&gw, &id)?;
    s.timeline()
        .read_since(q.since)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

struct StreamState {
    session: Arc<Session>,
    heads: tokio::sync::watch::Receiver<Seq>,
    cursor: Seq,
    pending: VecDeque<Event>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Server-sent events from `since` (or `Last-Event-ID`) onward. The stream
/// closes once the session has ended and every event has been sent.
async fn stream_events(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let session = lookup(&gw, &id)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<Seq>().ok());
    let cursor = resume.unwrap_or(q.since).min(session.timeline().head());
    let state = StreamState {
        heads: session.timeline().subscribe(),
        session,
        cursor,
        pending: VecDeque::new(),
    };
    let stream = futures::stream::unfold(state, |mut st| async move {
        loop {
            if let Some(e) = st.pending.pop_front() {
                st.cursor = e.seq;
                return Some((Ok(sse_event(&e)), st));
            }
            let fresh = st
                .session
                .timeline()
                .read_since(st.cursor)
                .unwrap_or_default();
            if !fresh.is_empty() {
                st.pending.extend(fresh);
                continue;
            }
            if st.session.is_ended() {
                return None;
            }
            let _ = tokio::time::timeout(Duration::from_millis(500), st.heads.changed()).await;
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    author: String,
    text: String,
}

async fn post_message(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> ApiResult<(StatusCode, Json<Event>)> {
    let s = lookup(&gw, &id)?;
    let event = s.post_human_message(&body.author, &body.text)?;
    Ok((StatusCode::CREATED, Json(event)))
}

#[derive(Debug, Deserialize)]
struct PostTyping {
    author: String,
}

async fn post_typing(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Json(body): Json<PostTyping>,
) -> ApiResult<(StatusCode, Json<Event>)> {
    let s = lookup(&gw, &id)?;
    let event = s.post_typing(&body.author)?;
    Ok((StatusCode::CREATED, Json(event)))
}

async fn list_agents(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let s = lookup(&gw, &id)?;
    if gw.is_admin(&headers) {
        Ok(Json(s.participants()).into_response())
    } else {
        Ok(Json(public_participants(&s)).into_response())
    }
}

#[derive(Debug, Deserialize)]
struct AddAgent {
    name: String,
    role_name: String,
    #[serde(default)]
    persona: String,
    #[serde(default)]
    is_human: bool,
    #[serde(default)]
    provider: Option<String>,
}

async fn add_agent(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<AddAgent>,
) -> ApiResult<(StatusCode, Json<Event>)> {
    if !gw.is_admin(&headers) {
        return Err(ApiError::unauthorized());
    }
    let s = lookup(&gw, &id)?;
    let persona = crate::assets::resolve(&body.persona)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let spec = AgentSpec {
        is_human: body.is_human,
        ..AgentSpec::new(body.name, body.role_name, persona)
    };
    let event = s.add_agent_live(spec, body.provider.as_deref())?;
    Ok((StatusCode::CREATED, Json(event)))
}

async fn get_reasoning(
    State(gw): State<Gateway>,
    Path((id, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<ReasoningEntry>>> {
    if !gw.is_admin(&headers) {
        return Err(ApiError::unauthorized());
    }
    let s = lookup(&gw, &id)?;
    s.reasoning_log(&name)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no AI agent named `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRow {
    pub name: String,
    pub role_name: String,
    pub messages: usize,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    #[serde(flatten)]
    pub status: Status,
    pub head: Seq,
    pub activity: Vec<ActivityRow>,
    pub turns: Vec<Turn>,
}

async fn get_report(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionReport>> {
    let s = lookup(&gw, &id)?;
    let events = s.timeline().snapshot();
    let activity = s
        .participants()
        .into_iter()
        .map(|p| {
            let mine = || events.iter().filter(|e| e.author == p.id);
            ActivityRow {
                messages: mine()
                    .filter(|e| matches!(e.kind, EventKind::Message { .. }))
                    .count(),
                files: mine()
                    .filter(|e| matches!(e.kind, EventKind::FileCreated { .. }))
                    .count(),
                name: p.name,
                role_name: p.role_name,
            }
        })
        .collect();
    Ok(Json(SessionReport {
        session_id: s.id().to_string(),
        status: s.status(),
        head: events.len() as Seq,
        activity,
        turns: transcript::turns_from_events(&events, s.config().utc_offset_minutes),
    }))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    gateway: Gateway,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, gateway.router())
        .with_graceful_shutdown(shutdown)
        .await
}
