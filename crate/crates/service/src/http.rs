//! HTTP routes. Bodies are documented in `API.md`; errors are always
//! `{"error": {"code", "message"}}` with the status from [`status_for`].

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use tomb_core::model::{CharacterId, CharacterPatch, ProjectId, SceneId};
use tomb_core::prose::ExportFormat;
use tomb_core::provider::CompletionProvider;

use crate::error::{status_for, ApiError};
use crate::events::{EventRegistry, GenerationEvent, GenerationHandle};
use crate::ops::{self, Workspace};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub provider: Option<Arc<dyn CompletionProvider>>,
    pub events: EventRegistry,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(status_for(&self.code)).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn ok(status: StatusCode, value: Value) -> ApiResult {
    Ok((status, Json(value)).into_response())
}

fn wrap<T: Serialize>(key: &str, value: &T) -> Value {
    let mut m = serde_json::Map::new();
    m.insert(key.into(), serde_json::to_value(value).expect("serializable"));
    Value::Object(m)
}

/// Splits `"<target>:<action>"`.
fn split_action(segment: &str) -> Result<(&str, &str), ApiError> {
    segment
        .rsplit_once(':')
        .filter(|(t, a)| !t.is_empty() && !a.is_empty())
        .ok_or_else(|| ApiError::new("UNKNOWN_ACTION", format!("no action in {segment:?}")))
}

fn parse_index(s: &str) -> Result<usize, ApiError> {
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("invalid index {s:?}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project).delete(delete_project))
        .route("/projects/{id}/characters", post(add_character))
        .route("/projects/{id}/characters/{cid}", patch(edit_character))
        .route("/projects/{id}/scenes", post(add_scene))
        .route("/projects/{id}/scenes/{sid}", patch(edit_scene).post(scene_action))
        .route("/projects/{id}/scenes/{sid}/{action}", post(beat_action))
        .route("/projects/{id}/scenes/{sid}/beats/{index}", patch(edit_beat))
        .route("/projects/{id}/scenes/{sid}/segments/{target}", post(segment_action).patch(edit_segment))
        .route("/projects/{id}/export", get(export))
        .route("/generations/{rid}/events", get(generation_events))
        .fallback(|| async { ApiError::new("NOT_FOUND", "no such route") })
        .with_state(state)
}

async fn create_project(State(st): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: ops::CreateProject = body(&bytes)?;
    let ws = st.workspace.clone();
    let instr = blocking(move || ws.create(&req)).await?;
    ok(StatusCode::CREATED, wrap("project", &instr))
}

async fn list_projects(State(st): State<AppState>) -> ApiResult {
    ok(StatusCode::OK, wrap("projects", &st.workspace.list()))
}

async fn get_project(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let ws = st.workspace.clone();
    let instr = blocking(move || ws.get(&ProjectId::from(id.as_str()))).await?;
    ok(StatusCode::OK, wrap("project", &instr))
}

async fn delete_project(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let ws = st.workspace.clone();
    blocking(move || ws.delete(&ProjectId::from(id.as_str()))).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn add_character(State(st): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let req: ops::AddCharacter = body(&bytes)?;
    let ws = st.workspace.clone();
    let c = blocking(move || ws.add_character(&ProjectId::from(id.as_str()), &req)).await?;
    ok(StatusCode::CREATED, wrap("character", &c))
}

async fn edit_character(
    State(st): State<AppState>,
    Path((id, cid)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let patch: CharacterPatch = body(&bytes)?;
    let ws = st.workspace.clone();
    let c = blocking(move || ws.edit_character(&ProjectId::from(id.as_str()), &CharacterId::from(cid.as_str()), &patch))
        .await?;
    ok(StatusCode::OK, wrap("character", &c))
}

async fn add_scene(State(st): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let req: ops::AddScene = body(&bytes)?;
    let ws = st.workspace.clone();
    let s = blocking(move || ws.add_scene(&ProjectId::from(id.as_str()), &req)).await?;
    ok(StatusCode::CREATED, wrap("scene", &s))
}

async fn edit_scene(
    State(st): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let req: ops::EditScene = body(&bytes)?;
    let ws = st.workspace.clone();
    let s = blocking(move || ws.edit_scene(&ProjectId::from(id.as_str()), &SceneId::from(sid.as_str()), &req)).await?;
    ok(StatusCode::OK, wrap("scene", &s))
}

async fn scene_action(
    State(st): State<AppState>,
    Path((id, target)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
    bytes: Bytes,
) -> ApiResult {
    let (sid, action) = split_action(&target)?;
    let (id, sid) = (ProjectId::from(id.as_str()), SceneId::from(sid));
    match action {
        "recompute" => {
            generation(&st, &q, true, move |ws, p, h| {
                let r = ws.recompute(&id, &sid, p.expect("required"), Some(h))?;
                Ok(serde_json::to_value(r).expect("serializable"))
            })
            .await
        }
        "render" => {
            let req: ops::RenderScene = body(&bytes)?;
            generation(&st, &q, true, move |ws, p, h| {
                let doc = ws.render(&id, &sid, &req, p.expect("required"), Some(h))?;
                Ok(wrap("document", &doc))
            })
            .await
        }
        other => Err(ApiError::new("UNKNOWN_ACTION", format!("unknown scene action {other:?}"))),
    }
}

async fn beat_action(
    State(st): State<AppState>,
    Path((id, sid, action)): Path<(String, String, String)>,
    Query(q): Query<HashMap<String, String>>,
    bytes: Bytes,
) -> ApiResult {
    let (target, action) = split_action(&action)?;
    if target != "beats" {
        return Err(ApiError::new("NOT_FOUND", "no such route"));
    }
    let (id, sid) = (ProjectId::from(id.as_str()), SceneId::from(sid.as_str()));
    match action {
        "simulate" => {
            let req: ops::SimulateBeat = body(&bytes)?;
            generation(&st, &q, true, move |ws, p, h| {
                Ok(wrap("draft", &ws.simulate(&id, &sid, &req, p.expect("required"), Some(h))?))
            })
            .await
        }
        "nudge" => {
            let req: ops::NudgeBeat = body(&bytes)?;
            generation(&st, &q, true, move |ws, p, h| {
                Ok(wrap("draft", &ws.nudge(&id, &sid, &req, p.expect("required"), Some(h))?))
            })
            .await
        }
        "author" => {
            let req: ops::AuthorBeat = body(&bytes)?;
            let needs = req.polish;
            generation(&st, &q, needs, move |ws, p, h| {
                Ok(wrap("draft", &ws.author(&id, &sid, &req, p, Some(h))?))
            })
            .await
        }
        "accept" => {
            let req: ops::AcceptBeat = body(&bytes)?;
            generation(&st, &q, true, move |ws, p, h| {
                let r = ws.accept(&id, &sid, &req, p.expect("required"), Some(h))?;
                Ok(serde_json::to_value(r).expect("serializable"))
            })
            .await
        }
        "reject" => {
            let ws = st.workspace.clone();
            let s = blocking(move || ws.reject(&id, &sid)).await?;
            ok(StatusCode::OK, wrap("scene", &s))
        }
        other => Err(ApiError::new("UNKNOWN_ACTION", format!("unknown beat action {other:?}"))),
    }
}

async fn edit_beat(
    State(st): State<AppState>,
    Path((id, sid, index)): Path<(String, String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let index = parse_index(&index)?;
    let req: ops::EditText = body(&bytes)?;
    let ws = st.workspace.clone();
    let s = blocking(move || ws.edit_beat(&ProjectId::from(id.as_str()), &SceneId::from(sid.as_str()), index, &req))
        .await?;
    ok(StatusCode::OK, wrap("scene", &s))
}

async fn segment_action(
    State(st): State<AppState>,
    Path((id, sid, target)): Path<(String, String, String)>,
    Query(q): Query<HashMap<String, String>>,
    bytes: Bytes,
) -> ApiResult {
    let (index, action) = split_action(&target)?;
    if action != "regenerate" {
        return Err(ApiError::new("UNKNOWN_ACTION", format!("unknown segment action {action:?}")));
    }
    let index = parse_index(index)?;
    let req: ops::RegenerateSegment = body(&bytes)?;
    let (id, sid) = (ProjectId::from(id.as_str()), SceneId::from(sid.as_str()));
    generation(&st, &q, true, move |ws, p, h| {
        let seg = ws.regenerate_segment(&id, &sid, index, &req, p.expect("required"), Some(h))?;
        Ok(wrap("segment", &seg))
    })
    .await
}

async fn edit_segment(
    State(st): State<AppState>,
    Path((id, sid, index)): Path<(String, String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let index = parse_index(&index)?;
    let req: ops::EditText = body(&bytes)?;
    let ws = st.workspace.clone();
    let seg =
        blocking(move || ws.edit_segment(&ProjectId::from(id.as_str()), &SceneId::from(sid.as_str()), index, &req))
            .await?;
    ok(StatusCode::OK, wrap("segment", &seg))
}

async fn export(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let scope = ops::parse_scope(q.get("scope").map(String::as_str));
    let format = ops::parse_format(q.get("format").map(String::as_str))?;
    let ws = st.workspace.clone();
    let text = blocking(move || ws.export(&ProjectId::from(id.as_str()), &scope, format)).await?;
    let mime = match format {
        ExportFormat::Plain => "text/plain; charset=utf-8",
        ExportFormat::Markdown => "text/markdown; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, mime)], text).into_response())
}

fn sse_event(e: &GenerationEvent) -> Event {
    Event::default()
        .event(e.phase.as_str())
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("serializable"))
}

async fn generation_events(State(st): State<AppState>, Path(rid): Path<String>) -> ApiResult {
    let sub = st.events.subscribe(&rid)?;
    let replay = stream::iter(sub.replay.iter().map(sse_event).map(Ok::<_, Infallible>).collect::<Vec<_>>());
    let live = stream::unfold(sub.live, |rx| async move {
        let mut rx = rx?;
        loop {
            match rx.recv().await {
                Ok(e) => {
                    let next = (!e.phase.is_terminal()).then_some(rx);
                    return Some((Ok(sse_event(&e)), next));
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(_) => return None,
            }
        }
    });
    let events: std::pin::Pin<Box<dyn Stream<Item = Result<Event, Infallible>> + Send>> = Box::pin(replay.chain(live));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new("INTERNAL", e.to_string()))?
}

type GenFn = dyn FnOnce(&Workspace, Option<&dyn CompletionProvider>, &GenerationHandle) -> Result<Value, ApiError> + Send;

/// Runs a generation on the blocking pool with progress events. With
/// `?wait=false` the response is `202 {"request_id"}` and the result arrives
/// through the event stream; otherwise the response carries the result.
async fn generation(
    st: &AppState,
    q: &HashMap<String, String>,
    needs_provider: bool,
    f: impl FnOnce(&Workspace, Option<&dyn CompletionProvider>, &GenerationHandle) -> Result<Value, ApiError>
        + Send
        + 'static,
) -> ApiResult {
    let f: Box<GenFn> = Box::new(f);
    if needs_provider && st.provider.is_none() {
        return Err(ApiError::new("PROVIDER_UNAVAILABLE", "no completion provider is configured"));
    }
    let wait = !matches!(q.get("wait").map(String::as_str), Some("false") | Some("0"));
    let handle = st.events.start();
    let rid = handle.request_id().to_string();
    let ws = st.workspace.clone();
    let provider = st.provider.clone();
    let task = tokio::task::spawn_blocking(move || {
        let result = f(&ws, provider.as_deref(), &handle);
        handle.finish(&result);
        result
    });
    let header_value = HeaderValue::from_str(&rid).expect("uuid is a valid header");
    if !wait {
        let mut resp = (StatusCode::ACCEPTED, Json(json!({ "request_id": rid }))).into_response();
        resp.headers_mut().insert(REQUEST_ID_HEADER, header_value);
        return Ok(resp);
    }
    let result = task
        .await
        .map_err(|e| ApiError::new("INTERNAL", e.to_string()))
        .and_then(|r| r);
    let mut resp = match result {
        Ok(Value::Object(mut m)) => {
            m.insert("request_id".into(), Value::String(rid));
            (StatusCode::OK, Json(Value::Object(m))).into_response()
        }
        Ok(other) => (StatusCode::OK, Json(other)).into_response(),
        Err(e) => e.into_response(),
    };
    resp.headers_mut().insert(REQUEST_ID_HEADER, header_value);
    Ok(resp)
}
