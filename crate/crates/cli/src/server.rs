//! HTTP inference service.
//!
//! Sessions live in memory only; a restart forgets them.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::session::{Engine, Session};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);

const FALLBACK_PAGE: &str = include_str!("../assets/index.html");

pub struct AppState {
    engine: Option<Arc<Engine>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    idle_timeout: Duration,
}

impl AppState {
    pub fn new(engine: Option<Engine>, idle_timeout: Duration) -> Arc<Self> {
        Arc::new(AppState { engine: engine.map(Arc::new), sessions: RwLock::default(), idle_timeout })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }

    /// Drops sessions idle for longer than the timeout.
    pub fn expire_idle(&self) -> usize {
        let mut table = self.sessions.write().expect("session table lock");
        let before = table.len();
        // a session locked by an in-flight request is active by definition
        table.retain(|_, s| s.try_lock().map_or(true, |s| s.last_active.elapsed() <= self.idle_timeout));
        before - table.len()
    }

    fn lookup(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        let s = self.sessions.read().expect("session table lock").get(id).cloned()?;
        let expired = s.lock().expect("session lock").last_active.elapsed() > self.idle_timeout;
        if expired {
            self.sessions.write().expect("session table lock").remove(id);
            return None;
        }
        Some(s)
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn no_checkpoint() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded")
}

/// 128 random bits from the thread-local CSPRNG, hex encoded.
fn session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

async fn health(State(app): State<Arc<AppState>>) -> Response {
    match &app.engine {
        Some(e) => Json(json!({ "checkpoint": e.fingerprint() })).into_response(),
        None => no_checkpoint(),
    }
}

async fn create_session(State(app): State<Arc<AppState>>) -> Response {
    let Some(engine) = &app.engine else {
        return no_checkpoint();
    };
    let id = session_id();
    let session = Arc::new(Mutex::new(engine.new_session()));
    app.sessions.write().expect("session table lock").insert(id.clone(), session);
    (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response()
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    text: String,
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(msg): Json<Message>,
) -> Response {
    let Some(engine) = app.engine.clone() else {
        return no_checkpoint();
    };
    let Some(session) = app.lookup(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown or expired session");
    };
    let result = tokio::task::spawn_blocking(move || {
        let mut s = session.lock().expect("session lock");
        engine.respond(&mut s, &msg.text)
    })
    .await;
    match result {
        Ok(Ok(reply)) => Json(reply).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn transcript(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match app.lookup(&id) {
        Some(s) => Json(s.lock().expect("session lock").transcript.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown or expired session"),
    }
}

async fn fallback_page() -> Html<&'static str> {
    Html(FALLBACK_PAGE)
}

/// API routes plus static assets under `/`. Without an asset directory a
/// placeholder page is served at `/`.
pub fn router(app: Arc<AppState>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}/message", post(post_message))
        .route("/session/{id}/transcript", get(transcript))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(app);
    let root = Router::new().nest("/api", api);
    match assets {
        Some(dir) => root.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => root.route("/", get(fallback_page)),
    }
}

pub async fn serve(app: Arc<AppState>, addr: SocketAddr, assets: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    axum::serve(listener, router(app, assets))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
