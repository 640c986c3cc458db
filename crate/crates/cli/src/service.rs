//! Local HTTP service hosting interactive sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State as AxState};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use stmlforge::driver::{DriverError, Session, Snapshot};
use stmlforge::rewrite::RewriteError;
use stmlforge::rules::Rule;
use stmlforge::translate::{emit_openmp, Target};
use stmlforge::{AstError, NodeId};

use crate::{candidate_views, state_view, to_json, CandidateView, StateView};

pub struct AppState {
    rules: Arc<Vec<Rule>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    state_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(rules: Vec<Rule>, state_dir: Option<PathBuf>) -> AppState {
        AppState {
            rules: Arc::new(rules),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            state_dir,
        }
    }

    /// Restores every snapshot found in the state directory.
    pub fn load(rules: Vec<Rule>, dir: PathBuf) -> anyhow::Result<AppState> {
        std::fs::create_dir_all(&dir)?;
        let st = AppState::new(rules, Some(dir.clone()));
        let mut max = 0;
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let snap: Snapshot = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let s = Session::restore(&snap, st.rules.clone())?;
            if let Some(n) = snap.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max = max.max(n);
            }
            log::info!("restored session {} ({} steps)", snap.id, snap.steps.len());
            st.sessions
                .write()
                .unwrap()
                .insert(snap.id.clone(), Arc::new(Mutex::new(s)));
        }
        st.next_id.store(max + 1, Ordering::SeqCst);
        Ok(st)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    fn persist(&self, s: &Session) {
        let Some(dir) = &self.state_dir else { return };
        let path = dir.join(format!("{}.json", s.id));
        let text = serde_json::to_string_pretty(&s.snapshot()).expect("snapshots serialize");
        if let Err(e) = std::fs::write(&path, text) {
            log::error!("cannot persist {}: {e}", path.display());
        }
    }

    fn view(&self, s: &Session) -> Result<StateView, ApiError> {
        state_view(s.current(), s.history(), s.rules()).map_err(internal)
    }
}

/// JSON rendered exactly as the command-line tool prints it.
pub struct Pretty<T>(pub T);

impl<T: Serialize> IntoResponse for Pretty<T> {
    fn into_response(self) -> Response {
        (
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            to_json(&self.0),
        )
            .into_response()
    }
}

pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Pretty(json!({ "error": self.1 }))).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

/// Status for a failed apply: candidates that no longer hold are stale.
fn apply_error(e: DriverError) -> ApiError {
    let code = match &e {
        DriverError::Rewrite(RewriteError::NotApplicable { .. } | RewriteError::Unconfirmed { .. })
        | DriverError::Rewrite(RewriteError::Ast(AstError::UnknownPosition(_)))
        | DriverError::NothingToUndo
        | DriverError::NothingToRedo => StatusCode::CONFLICT,
        DriverError::Rewrite(RewriteError::UnknownRule(_)) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError(code, e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub source: String,
    #[serde(default)]
    pub target: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct ApplyRequest {
    pub rule: String,
    pub pos: NodeId,
    #[serde(default)]
    pub alt: usize,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Deserialize)]
pub struct TranslateRequest {
    #[serde(default)]
    pub target: Option<String>,
}

async fn create(
    AxState(app): AxState<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Pretty<Created>), ApiError> {
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::SeqCst));
    let s = Session::new(id.clone(), &req.source, req.target, app.rules.clone()).map_err(|e| match e {
        DriverError::Parse(_) | DriverError::Annotation(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        other => internal(other),
    })?;
    app.persist(&s);
    app.sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, Pretty(Created { session_id: id })))
}

async fn show(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> Result<Pretty<StateView>, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Pretty(app.view(&s)?))
}

async fn list_candidates(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Pretty<Vec<CandidateView>>, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Pretty(candidate_views(s.current(), s.rules()).map_err(internal)?))
}

async fn apply(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ApplyRequest>,
) -> Result<Pretty<StateView>, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    s.apply(&req.rule, req.pos, req.alt, req.force).map_err(apply_error)?;
    app.persist(&s);
    Ok(Pretty(app.view(&s)?))
}

async fn undo(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> Result<Pretty<StateView>, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    s.undo().map_err(apply_error)?;
    app.persist(&s);
    Ok(Pretty(app.view(&s)?))
}

async fn redo(AxState(app): AxState<Arc<AppState>>, Path(id): Path<String>) -> Result<Pretty<StateView>, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    s.redo().map_err(apply_error)?;
    app.persist(&s);
    Ok(Pretty(app.view(&s)?))
}

async fn translate(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<TranslateRequest>>,
) -> Result<Pretty<serde_json::Value>, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    let name = body
        .and_then(|Json(b)| b.target)
        .or_else(|| s.target.clone())
        .unwrap_or_else(|| "openmp".into());
    let target: Target = name
        .parse()
        .map_err(|e: stmlforge::translate::TranslateError| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    if target != Target::Openmp {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("no backend emits code for `{name}`"),
        ));
    }
    let st = s.current();
    let output = emit_openmp(&st.program, &st.store).map_err(|e| ApiError(StatusCode::CONFLICT, e.to_string()))?;
    Ok(Pretty(json!({ "output": output })))
}

async fn export(
    AxState(app): AxState<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Pretty<serde_json::Value>, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Pretty(json!({ "log": s.export_log(), "steps": s.history() })))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(show))
        .route("/sessions/:id/candidates", get(list_candidates))
        .route("/sessions/:id/apply", post(apply))
        .route("/sessions/:id/undo", post(undo))
        .route("/sessions/:id/redo", post(redo))
        .route("/sessions/:id/translate", post(translate))
        .route("/sessions/:id/export", get(export))
        .with_state(app)
}

pub async fn serve(app: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).await?;
    Ok(())
}
