//! Runs operations against a local store or a running service. Both return
//! the JSON bodies documented in `API.md` (minus `request_id`).

use serde::Serialize;
use serde_json::{json, Value};

use tomb_core::model::{CharacterId, CharacterPatch, ProjectId, SceneId};
use tomb_core::prose::ExportScope;
use tomb_core::provider::CompletionProvider;
use tomb_service::ops::{self, Workspace};
use tomb_service::ApiError;

pub enum Op {
    Create(ops::CreateProject),
    List,
    Get,
    AddCharacter(ops::AddCharacter),
    EditCharacter(CharacterId, CharacterPatch),
    AddScene(ops::AddScene),
    EditScene(SceneId, ops::EditScene),
    Simulate(SceneId, ops::SimulateBeat),
    Nudge(SceneId, ops::NudgeBeat),
    Author(SceneId, ops::AuthorBeat),
    Accept(SceneId, ops::AcceptBeat),
    Reject(SceneId),
    EditBeat(SceneId, usize, ops::EditText),
    Recompute(SceneId),
    Render(SceneId, ops::RenderScene),
    Regenerate(SceneId, usize, ops::RegenerateSegment),
    EditSegment(SceneId, usize, ops::EditText),
    Export { scope: Option<String>, format: Option<String> },
}

impl Op {
    pub fn needs_provider(&self) -> bool {
        match self {
            Op::Simulate(..) | Op::Nudge(..) | Op::Accept(..) | Op::Recompute(_) | Op::Render(..) | Op::Regenerate(..) => {
                true
            }
            Op::Author(_, req) => req.polish,
            _ => false,
        }
    }
}

pub enum Backend<'a> {
    Local {
        workspace: Workspace,
        provider: Option<&'a dyn CompletionProvider>,
    },
    Remote {
        base: String,
        client: reqwest::blocking::Client,
    },
}

fn wrap<T: Serialize>(key: &str, v: T) -> Value {
    json!({ key: v })
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

impl Backend<'_> {
    /// Runs `op` on project `project` (ignored by `Create` and `List`).
    /// `Export` yields a JSON string holding the document text.
    pub fn run(&self, project: Option<&ProjectId>, op: Op) -> Result<Value, ApiError> {
        match self {
            Backend::Local { workspace, provider } => local(workspace, *provider, project, op),
            Backend::Remote { base, client } => remote(base, client, project, op),
        }
    }
}

fn require(project: Option<&ProjectId>) -> Result<&ProjectId, ApiError> {
    project.ok_or_else(|| ApiError::new("NO_PROJECT", "no project selected; pass --project or run `tomb new`"))
}

fn local(
    ws: &Workspace,
    provider: Option<&dyn CompletionProvider>,
    project: Option<&ProjectId>,
    op: Op,
) -> Result<Value, ApiError> {
    let provider_for = |op: &Op| -> Result<Option<&dyn CompletionProvider>, ApiError> {
        match provider {
            Some(p) => Ok(Some(p)),
            None if op.needs_provider() => {
                Err(ApiError::new("PROVIDER_UNAVAILABLE", "no completion provider is configured"))
            }
            None => Ok(None),
        }
    };
    let p = provider_for(&op)?;
    let need = || p.expect("checked by provider_for");
    Ok(match op {
        Op::Create(req) => wrap("project", ws.create(&req)?),
        Op::List => wrap("projects", ws.list()),
        Op::Get => wrap("project", ws.get(require(project)?)?),
        Op::AddCharacter(req) => wrap("character", ws.add_character(require(project)?, &req)?),
        Op::EditCharacter(cid, patch) => wrap("character", ws.edit_character(require(project)?, &cid, &patch)?),
        Op::AddScene(req) => wrap("scene", ws.add_scene(require(project)?, &req)?),
        Op::EditScene(sid, req) => wrap("scene", ws.edit_scene(require(project)?, &sid, &req)?),
        Op::Simulate(sid, req) => wrap("draft", ws.simulate(require(project)?, &sid, &req, need(), None)?),
        Op::Nudge(sid, req) => wrap("draft", ws.nudge(require(project)?, &sid, &req, need(), None)?),
        Op::Author(sid, req) => wrap("draft", ws.author(require(project)?, &sid, &req, p, None)?),
        Op::Accept(sid, req) => to_value(ws.accept(require(project)?, &sid, &req, need(), None)?),
        Op::Reject(sid) => wrap("scene", ws.reject(require(project)?, &sid)?),
        Op::EditBeat(sid, i, req) => wrap("scene", ws.edit_beat(require(project)?, &sid, i, &req)?),
        Op::Recompute(sid) => to_value(ws.recompute(require(project)?, &sid, need(), None)?),
        Op::Render(sid, req) => wrap("document", ws.render(require(project)?, &sid, &req, need(), None)?),
        Op::Regenerate(sid, i, req) => {
            wrap("segment", ws.regenerate_segment(require(project)?, &sid, i, &req, need(), None)?)
        }
        Op::EditSegment(sid, i, req) => wrap("segment", ws.edit_segment(require(project)?, &sid, i, &req)?),
        Op::Export { scope, format } => {
            let scope: ExportScope = ops::parse_scope(scope.as_deref());
            let format = ops::parse_format(format.as_deref())?;
            Value::String(ws.export(require(project)?, &scope, format)?)
        }
    })
}

fn remote(
    base: &str,
    client: &reqwest::blocking::Client,
    project: Option<&ProjectId>,
    op: Op,
) -> Result<Value, ApiError> {
    use reqwest::Method;
    let base = base.trim_end_matches('/');
    let pid = || require(project).map(|p| format!("{base}/projects/{p}"));
    let (method, url, payload): (Method, String, Option<Value>) = match &op {
        Op::Create(req) => (Method::POST, format!("{base}/projects"), Some(to_value(req))),
        Op::List => (Method::GET, format!("{base}/projects"), None),
        Op::Get => (Method::GET, pid()?, None),
        Op::AddCharacter(req) => (Method::POST, format!("{}/characters", pid()?), Some(to_value(req))),
        Op::EditCharacter(cid, patch) => (Method::PATCH, format!("{}/characters/{cid}", pid()?), Some(to_value(patch))),
        Op::AddScene(req) => (Method::POST, format!("{}/scenes", pid()?), Some(to_value(req))),
        Op::EditScene(sid, req) => (Method::PATCH, format!("{}/scenes/{sid}", pid()?), Some(to_value(req))),
        Op::Simulate(sid, req) => (Method::POST, format!("{}/scenes/{sid}/beats:simulate", pid()?), Some(to_value(req))),
        Op::Nudge(sid, req) => (Method::POST, format!("{}/scenes/{sid}/beats:nudge", pid()?), Some(to_value(req))),
        Op::Author(sid, req) => (Method::POST, format!("{}/scenes/{sid}/beats:author", pid()?), Some(to_value(req))),
        Op::Accept(sid, req) => (Method::POST, format!("{}/scenes/{sid}/beats:accept", pid()?), Some(to_value(req))),
        Op::Reject(sid) => (Method::POST, format!("{}/scenes/{sid}/beats:reject", pid()?), None),
        Op::EditBeat(sid, i, req) => (Method::PATCH, format!("{}/scenes/{sid}/beats/{i}", pid()?), Some(to_value(req))),
        Op::Recompute(sid) => (Method::POST, format!("{}/scenes/{sid}:recompute", pid()?), None),
        Op::Render(sid, req) => (Method::POST, format!("{}/scenes/{sid}:render", pid()?), Some(to_value(req))),
        Op::Regenerate(sid, i, req) => (
            Method::POST,
            format!("{}/scenes/{sid}/segments/{i}:regenerate", pid()?),
            Some(to_value(req)),
        ),
        Op::EditSegment(sid, i, req) => (Method::PATCH, format!("{}/scenes/{sid}/segments/{i}", pid()?), Some(to_value(req))),
        Op::Export { scope, format } => {
            let mut url = format!("{}/export", pid()?);
            let q: Vec<String> = [("scope", scope), ("format", format)]
                .iter()
                .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}")))
                .collect();
            if !q.is_empty() {
                url = format!("{url}?{}", q.join("&"));
            }
            (Method::GET, url, None)
        }
    };
    let mut req = client.request(method, &url);
    if let Some(p) = payload {
        req = req.json(&p);
    }
    let resp = req
        .send()
        .map_err(|e| ApiError::new("TRANSPORT_ERROR", format!("cannot reach {base}: {e}")))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| ApiError::new("TRANSPORT_ERROR", e.to_string()))?;
    if !status.is_success() {
        return Err(serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| serde_json::from_value::<ApiError>(v["error"].clone()).ok())
            .unwrap_or_else(|| ApiError::new("TRANSPORT_ERROR", format!("status {status}: {text}"))));
    }
    if matches!(op, Op::Export { .. }) {
        return Ok(Value::String(text));
    }
    if status.as_u16() == 204 || text.is_empty() {
        return Ok(Value::Null);
    }
    let mut v: Value =
        serde_json::from_str(&text).map_err(|e| ApiError::new("MALFORMED_RESPONSE", e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.remove("request_id");
    }
    Ok(v)
}
