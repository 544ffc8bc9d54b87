use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use subtract_core::engine::persist::manifest;
use subtract_core::engine::{
    branch, commit_proposal, frame_plan, mark_done, propose, record_skip, write_frames, BranchAction, BranchDirective,
    BranchOptions, EngineConfig, EngineError, ExportPreset, NodeId, ProposalOutcome, ProposeResult, Start,
    TrajectoryTree,
};
use subtract_core::{RasterImage, SceneSpec};

use crate::error::ApiError;
use crate::session::{basis, CachedProposal, Inner, Session, SessionMeta, Slot, SourceKind};
use crate::{AppState, BackendChoice};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

const MAX_BODY: usize = 64 << 20;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"ok": true})) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/nodes/{node}/image", get(node_image))
        .route("/sessions/{id}/nodes/{node}/mask", get(node_mask))
        .route("/sessions/{id}/nodes/{node}/propose", post(propose_at))
        .route("/sessions/{id}/nodes/{node}/decision", post(decide))
        .route("/sessions/{id}/proposals/{pid}", get(get_proposal))
        .route("/sessions/{id}/proposals/{pid}/image", get(proposal_image))
        .route("/sessions/{id}/proposals/{pid}/mask", get(proposal_mask))
        .route("/sessions/{id}/export", post(export))
        .route("/sessions/{id}/exports/{eid}/{file}", get(export_file))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

// ---- sessions -------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    scene: Option<Value>,
    image_base64: Option<String>,
    config: Option<EngineConfig>,
}

fn decode_image(bytes: &[u8]) -> ApiResult<RasterImage> {
    RasterImage::decode(bytes).map_err(|e| ApiError::bad_request(format!("image is not a decodable PNG: {e}")))
}

/// Mask PNG paths would be read from the server's filesystem; API scenes
/// must describe masks inline.
fn reject_file_masks(scene: &Value) -> ApiResult<()> {
    let elements = scene.get("elements").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default();
    if elements.iter().any(|e| e.get("mask").and_then(|m| m.get("png")).is_some()) {
        return Err(ApiError::bad_request("scene masks must be rect, ellipse or rle; png paths are not accepted"));
    }
    Ok(())
}

fn summary(s: &Session) -> Value {
    let v = s.view();
    json!({
        "id": s.id(),
        "status": v.status,
        "source": s.meta.source,
        "nodes": v.tree.nodes.len(),
        "main_path": v.tree.main_path,
        "tree_hash": v.hash,
        "last_error": v.last_error,
        "config": s.meta.config,
    })
}

async fn create_session(State(state): Shared, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let content_type = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let (start, source, config) = if content_type.starts_with("image/") {
        (Start::Image(decode_image(&body)?), SourceKind::Image, EngineConfig::default())
    } else {
        let req: CreateRequest = parse_json(&body)?;
        let config = req.config.unwrap_or_default();
        match (req.scene, req.image_base64) {
            (Some(scene), None) => {
                reject_file_masks(&scene)?;
                let spec = SceneSpec::from_json(&scene.to_string(), None)
                    .map_err(|e| ApiError::bad_request(format!("invalid scene: {e}")))?;
                (Start::Scene(spec), SourceKind::Scene, config)
            }
            (None, Some(b64)) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ApiError::bad_request(format!("image_base64 is not valid base64: {e}")))?;
                (Start::Image(decode_image(&bytes)?), SourceKind::Image, config)
            }
            _ => return Err(ApiError::bad_request("give exactly one of `scene` or `image_base64`")),
        }
    };
    config.validate()?;
    if source == SourceKind::Image && matches!(state.config.backend, BackendChoice::Oracle) {
        return Err(ApiError::bad_request("the oracle back-end needs a scene description, not an image"));
    }
    let backends = state.config.backend.build(&config)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = SessionMeta { id: id.clone(), source, created_unix, config };
    let dir = state.session_dir(&id);
    let session = tokio::task::spawn_blocking(move || {
        let tree = TrajectoryTree::new(start, &meta.config)?;
        Session::create(meta, dir, tree, backends)
    })
    .await??;
    let s = state.insert(session);
    tracing::info!(session = %id, "created");
    Ok((StatusCode::CREATED, Json(summary(&s))).into_response())
}

async fn list_sessions(State(state): Shared) -> Json<Value> {
    Json(Value::Array(state.sessions().iter().map(|s| summary(s)).collect()))
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = state.session(&id)?;
    Ok(Json(summary(&s)))
}

async fn get_tree(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = state.session(&id)?;
    let v = s.view();
    Ok(Json(json!({
        "session": id,
        "status": v.status,
        "tree_hash": v.hash,
        "tree": manifest(&v.tree),
    })))
}

async fn node_file(state: &AppState, id: &str, node: NodeId, mask: bool) -> ApiResult<Response> {
    let s = state.session(id)?;
    let v = s.view();
    let n = v.tree.node(node)?;
    let rel = if mask {
        if n.change_mask.is_none() {
            return Err(ApiError::not_found(format!("node {node} has no change mask")));
        }
        format!("masks/{node}.png")
    } else {
        format!("nodes/{node}.png")
    };
    let bytes = tokio::fs::read(s.dir.join(rel)).await.map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(png(bytes))
}

async fn node_image(State(state): Shared, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Response> {
    node_file(&state, &id, node, false).await
}

async fn node_mask(State(state): Shared, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Response> {
    node_file(&state, &id, node, true).await
}

// ---- proposals ------------------------------------------------------------

fn proposal_json(session: &str, p: &CachedProposal, current: (usize, usize)) -> Value {
    let base = format!("/sessions/{session}/proposals/{}", p.id);
    let mut out = json!({
        "proposal_id": p.id,
        "node": p.node,
        "poll": base,
        "stale": p.basis != current,
    });
    let extra = match &p.slot {
        Slot::Pending => json!({"status": "pending"}),
        Slot::Done => json!({"status": "done", "message": "no further proposals"}),
        Slot::Failed(e) => json!({"status": "failed", "error": e.code, "message": e.message}),
        Slot::Ready(prop) => {
            let (verify, passed) = match &prop.outcome {
                ProposalOutcome::Passed { verify, .. } => (vec![verify.clone()], true),
                ProposalOutcome::Failed { results, .. } => (results.clone(), false),
            };
            let mut v = json!({
                "status": "ready",
                "element_id": prop.selection.element_id,
                "name": prop.selection.name,
                "description": prop.selection.description,
                "level": prop.level,
                "element_level": prop.element_level,
                "forced": prop.forced,
                "passed": passed,
                "outcome": if passed { "passed" } else { "skipped_candidate" },
                "attempts": prop.outcome.attempts(),
                "verify": verify,
            });
            if passed {
                v["image_url"] = json!(format!("{base}/image"));
                v["mask_url"] = json!(format!("{base}/mask"));
            }
            v
        }
    };
    if let (Value::Object(o), Value::Object(e)) = (&mut out, extra) {
        o.extend(e);
    }
    out
}

/// Computes a proposal and records it; a finished node is marked done.
async fn run_proposal(s: Arc<Session>, pid: String, node: NodeId, tree: Arc<TrajectoryTree>) {
    let backends = s.backends.clone();
    let cfg = s.meta.config.clone();
    let result = tokio::task::spawn_blocking(move || propose(&tree, node, &backends, &cfg)).await;
    let mut inner = s.inner.lock().await;
    inner.running -= 1;
    let slot = match result {
        Ok(Ok(ProposeResult::Proposal(p))) => Slot::Ready(Arc::from(p)),
        Ok(Ok(ProposeResult::Done)) => {
            let unchanged = inner.proposals.get(&pid).is_some_and(|p| p.basis == basis(&inner.tree, node));
            if unchanged {
                if let Err(e) = s.mutate(&mut inner, move |t, _, _| mark_done(t, node)).await {
                    tracing::warn!(session = %s.id(), node, "could not persist finished node: {e}");
                }
            }
            Slot::Done
        }
        Ok(Err(e)) => Slot::Failed(e.into()),
        Err(e) => Slot::Failed(e.into()),
    };
    inner.last_error = match &slot {
        Slot::Failed(e) => Some(e.message.clone()),
        _ => None,
    };
    if let Some(p) = inner.proposals.get_mut(&pid) {
        p.slot = slot;
    }
    s.refresh(&inner);
}

fn proposal_response(s: &Session, p: &CachedProposal, tree: &TrajectoryTree) -> Response {
    if let Slot::Failed(e) = &p.slot {
        return e.clone().into_response();
    }
    let status = if matches!(p.slot, Slot::Pending) { StatusCode::ACCEPTED } else { StatusCode::OK };
    (status, Json(proposal_json(s.id(), p, basis(tree, p.node)))).into_response()
}

async fn propose_at(State(state): Shared, Path((id, node)): Path<(String, NodeId)>) -> ApiResult<Response> {
    let s = state.session(&id)?;
    let mut inner = s.inner.lock().await;
    let tree = inner.tree.clone();
    tree.node(node)?;
    let current = basis(&tree, node);
    if let Some(p) = inner.latest.get(&node).and_then(|pid| inner.proposals.get(pid)) {
        if p.basis == current && !matches!(p.slot, Slot::Failed(_)) {
            return Ok(proposal_response(&s, p, &tree));
        }
    }
    if tree.nodes[node].active_level.is_none() {
        return Ok(Json(json!({"node": node, "status": "done", "message": "no further proposals"})).into_response());
    }
    let pid = uuid::Uuid::new_v4().simple().to_string();
    inner.proposals.insert(pid.clone(), CachedProposal { id: pid.clone(), node, basis: current, slot: Slot::Pending });
    inner.latest.insert(node, pid.clone());
    inner.running += 1;
    s.refresh(&inner);
    drop(inner);

    let task = tokio::spawn(run_proposal(s.clone(), pid.clone(), node, tree));
    // On timeout the handle is dropped, which detaches the task; the result
    // lands in the cache and is picked up by polling.
    if let Ok(joined) = tokio::time::timeout(state.config.propose_timeout, task).await {
        joined?;
    }
    let inner = s.inner.lock().await;
    let p = inner.proposals.get(&pid).ok_or_else(|| ApiError::internal("proposal vanished"))?;
    Ok(proposal_response(&s, p, &inner.tree))
}

async fn get_proposal(State(state): Shared, Path((id, pid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let s = state.session(&id)?;
    let inner = s.inner.lock().await;
    let p = inner.proposals.get(&pid).ok_or_else(|| ApiError::not_found(format!("no proposal {pid}")))?;
    Ok(Json(proposal_json(s.id(), p, basis(&inner.tree, p.node))))
}

async fn proposal_file(state: &AppState, id: &str, pid: &str, mask: bool) -> ApiResult<Response> {
    let s = state.session(id)?;
    let inner = s.inner.lock().await;
    let p = inner.proposals.get(pid).ok_or_else(|| ApiError::not_found(format!("no proposal {pid}")))?;
    let Slot::Ready(prop) = &p.slot else {
        return Err(ApiError::not_found(format!("proposal {pid} has no preview")));
    };
    let prop = prop.clone();
    drop(inner);
    let bytes = tokio::task::spawn_blocking(move || match &prop.outcome {
        ProposalOutcome::Passed { change_mask, .. } if mask => Some(change_mask.encode_png()),
        ProposalOutcome::Passed { image, .. } => Some(image.encode_png()),
        ProposalOutcome::Failed { .. } => None,
    })
    .await?
    .ok_or_else(|| ApiError::not_found(format!("proposal {pid} failed verification and has no preview")))?;
    Ok(png(bytes))
}

async fn proposal_image(State(state): Shared, Path((id, pid)): Path<(String, String)>) -> ApiResult<Response> {
    proposal_file(&state, &id, &pid, false).await
}

async fn proposal_mask(State(state): Shared, Path((id, pid)): Path<(String, String)>) -> ApiResult<Response> {
    proposal_file(&state, &id, &pid, true).await
}

// ---- decisions ------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case", deny_unknown_fields)]
enum Decision {
    Accept {
        #[serde(default)]
        proposal_id: Option<String>,
    },
    Skip {
        #[serde(default)]
        proposal_id: Option<String>,
    },
    ForceRemove {
        element: String,
    },
    Forbid {
        element: String,
    },
}

async fn decide(State(state): Shared, Path((id, node)): Path<(String, NodeId)>, body: Bytes) -> ApiResult<Json<Value>> {
    let decision: Decision = parse_json(&body)?;
    let s = state.session(&id)?;
    let mut inner = s.inner.lock().await;
    inner.tree.node(node)?;
    let mut out = match decision {
        Decision::Accept { proposal_id } => decide_proposed(&s, &mut inner, node, proposal_id, true).await?,
        Decision::Skip { proposal_id } => decide_proposed(&s, &mut inner, node, proposal_id, false).await?,
        Decision::ForceRemove { element } => {
            open_branch(&s, &mut inner, node, BranchAction::ForceRemove(element)).await?
        }
        Decision::Forbid { element } => open_branch(&s, &mut inner, node, BranchAction::Forbid(element)).await?,
    };
    out["tree_hash"] = json!(s.view().hash);
    out["status"] = json!(s.view().status);
    Ok(Json(out))
}

async fn decide_proposed(
    s: &Session,
    inner: &mut Inner,
    node: NodeId,
    proposal_id: Option<String>,
    accept: bool,
) -> ApiResult<Value> {
    let pid = proposal_id
        .or_else(|| inner.latest.get(&node).cloned())
        .ok_or_else(|| ApiError::conflict(format!("no proposal awaiting a decision at node {node}")))?;
    let cached = inner
        .proposals
        .get(&pid)
        .ok_or_else(|| ApiError::conflict(format!("proposal {pid} is not awaiting a decision")))?;
    if cached.node != node {
        return Err(ApiError::conflict(format!("proposal {pid} belongs to node {}", cached.node)));
    }
    let Slot::Ready(p) = &cached.slot else {
        return Err(ApiError::conflict(format!("proposal {pid} is not ready for a decision")));
    };
    let p = p.clone();
    if accept && !p.outcome.passed() {
        return Err(ApiError::conflict(format!("proposal {pid} failed verification; skip it or force the removal")));
    }
    let element = p.selection.element_id.clone();
    let result = if accept {
        s.mutate(inner, move |t, _, _| commit_proposal(t, &p)).await?
    } else {
        s.mutate(inner, move |t, _, _| record_skip(t, &p).map(|()| node)).await?
    };
    inner.proposals.remove(&pid);
    if inner.latest.get(&node) == Some(&pid) {
        inner.latest.remove(&node);
    }
    s.refresh(inner);
    Ok(json!({"decision": if accept { "accept" } else { "skip" }, "element": element, "node": result}))
}

/// Branches without resuming: the client drives the new branch step by step.
async fn open_branch(s: &Session, inner: &mut Inner, node: NodeId, action: BranchAction) -> ApiResult<Value> {
    let (decision, element) = match &action {
        BranchAction::ForceRemove(e) => ("force_remove", e.clone()),
        BranchAction::Forbid(e) => ("forbid", e.clone()),
        _ => unreachable!("only user directives open branches here"),
    };
    let directive = BranchDirective { node_id: node, action };
    let root = s
        .mutate(inner, move |t, b, c| branch(t, &directive, b, c, BranchOptions { resume: false }, &mut |_| Ok(())))
        .await?;
    inner.latest.remove(&node);
    s.refresh(inner);
    let mut leaf = root;
    while let Some(&c) = inner.tree.nodes[leaf].children.first() {
        leaf = c;
    }
    Ok(json!({"decision": decision, "element": element, "branch_root": root, "node": leaf}))
}

// ---- export ---------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    repeat: Option<usize>,
    total: Option<usize>,
    /// Path end; the main-path leaf by default.
    node: Option<NodeId>,
}

async fn export(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: ExportRequest = if body.is_empty() { ExportRequest::default() } else { parse_json(&body)? };
    let s = state.session(&id)?;
    let tree = s.view().tree.clone();
    let preset = ExportPreset {
        repeat: req.repeat.unwrap_or(s.meta.config.frame_repeat),
        total: req.total.unwrap_or(s.meta.config.video_length),
    };
    let node = req.node.unwrap_or(*tree.main_path.last().expect("main path holds the root"));
    let eid = uuid::Uuid::new_v4().simple().to_string();
    let dir = s.dir.join("exports").join(&eid);
    let manifest = tokio::task::spawn_blocking(move || -> Result<_, EngineError> {
        let images = tree.path_images(node)?;
        let sources = frame_plan(images.len(), preset)?;
        let frames: Vec<RasterImage> = sources.iter().map(|&i| images[i].clone()).collect();
        write_frames(&dir, &frames, preset, sources)
    })
    .await??;
    let urls: Vec<String> = manifest.files.iter().map(|f| format!("/sessions/{id}/exports/{eid}/{f}")).collect();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "export_id": eid,
            "node": node,
            "frame_count": manifest.files.len(),
            "manifest": manifest,
            "manifest_url": format!("/sessions/{id}/exports/{eid}/manifest.json"),
            "frames": urls,
        })),
    )
        .into_response())
}

fn safe_export_file(name: &str) -> Option<&'static str> {
    if name == "manifest.json" {
        return Some("application/json");
    }
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())).then_some("image/png")
}

async fn export_file(
    State(state): Shared,
    Path((id, eid, file)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let s = state.session(&id)?;
    let mime = safe_export_file(&file).ok_or_else(|| ApiError::not_found(format!("no export file {file}")))?;
    if eid.is_empty() || !eid.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(ApiError::not_found(format!("no export {eid}")));
    }
    let bytes = tokio::fs::read(s.dir.join("exports").join(&eid).join(&file))
        .await
        .map_err(|_| ApiError::not_found(format!("no export file {eid}/{file}")))?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_file_names_are_whitelisted() {
        assert_eq!(safe_export_file("manifest.json"), Some("application/json"));
        assert_eq!(safe_export_file("frame_0012.png"), Some("image/png"));
        assert_eq!(safe_export_file("frame_.png"), None);
        assert_eq!(safe_export_file("../tree.json"), None);
        assert_eq!(safe_export_file("frame_1.png/../../x"), None);
    }

    #[test]
    fn file_masks_are_rejected() {
        let ok = json!({"elements": [{"mask": {"rect": [0, 0, 2, 2]}}]});
        assert!(reject_file_masks(&ok).is_ok());
        let bad = json!({"elements": [{"mask": {"png": "/etc/passwd"}}]});
        assert_eq!(reject_file_masks(&bad).unwrap_err().status, StatusCode::BAD_REQUEST);
    }

    #[test]
    fn decisions_parse() {
        let d: Decision = parse_json(br#"{"decision":"forbid","element":"mug"}"#).unwrap();
        assert!(matches!(d, Decision::Forbid { element } if element == "mug"));
        let d: Decision = parse_json(br#"{"decision":"accept"}"#).unwrap();
        assert!(matches!(d, Decision::Accept { proposal_id: None }));
        assert!(parse_json::<Decision>(br#"{"decision":"maybe"}"#).is_err());
    }
}
