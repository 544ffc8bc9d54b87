use std::collections::BTreeSet;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use subtract_core::engine::persist::{load_tree, tree_hash};
use subtract_core::planner::{EndpointConfig, PromptSet};
use subtract_core::RasterImage;
use subtract_service::{router, AppState, BackendChoice, ServiceConfig};
use tower::ServiceExt;

const LEVELS: [&str; 4] = ["distractor", "secondary", "primary", "background"];

/// `n` separated squares on a 96x96 canvas, levels cycling through the
/// taxonomy.
fn grid_scene(n: usize) -> Value {
    let elements: Vec<Value> = (0..n)
        .map(|i| {
            let (x, y) = (4 + 31 * (i % 3) as i64, 4 + 31 * (i / 3) as i64);
            json!({
                "id": format!("e{i}"),
                "level": LEVELS[i % 4],
                "z": 1,
                "mask": {"rect": [x, y, 20, 20]},
                "appearance": {"solid": [0.9, 0.1 + 0.08 * i as f32, 0.2]},
                "description": format!("square {i}"),
            })
        })
        .collect();
    json!({
        "dimensions": {"width": 96, "height": 96},
        "background": {"solid": [0.95, 0.95, 0.95]},
        "elements": elements,
    })
}

fn app_at(dir: &std::path::Path, backend: BackendChoice, timeout: Duration) -> Router {
    let mut cfg = ServiceConfig::new(dir, backend);
    cfg.propose_timeout = timeout;
    router(AppState::load(cfg).unwrap())
}

fn oracle_app(dir: &std::path::Path) -> Router {
    app_at(dir, BackendChoice::Oracle, Duration::from_secs(60))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let (status, bytes) = send(app, req).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn create(app: &Router, scene: Value) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({"scene": scene}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

/// Proposes at `node` and accepts while proposals pass. Returns the last
/// node and the removed elements.
async fn drive(app: &Router, sid: &str, mut node: usize, limit: usize) -> (usize, Vec<String>) {
    let mut removed = Vec::new();
    for _ in 0..limit {
        let (status, p) = call(app, "POST", &format!("/sessions/{sid}/nodes/{node}/propose"), None).await;
        assert_eq!(status, StatusCode::OK, "{p}");
        if p["status"] == "done" {
            break;
        }
        assert_eq!(p["status"], "ready", "{p}");
        let decision = if p["passed"] == true { "accept" } else { "skip" };
        let (status, d) = call(
            app,
            "POST",
            &format!("/sessions/{sid}/nodes/{node}/decision"),
            Some(json!({"decision": decision, "proposal_id": p["proposal_id"]})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{d}");
        if decision == "accept" {
            removed.push(p["element_id"].as_str().unwrap().to_string());
            node = d["node"].as_u64().unwrap() as usize;
        }
    }
    (node, removed)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interactive_run_removes_everything_in_level_order() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(4)).await;
    let (leaf, removed) = drive(&app, &sid, 0, 20).await;
    assert_eq!(removed, ["e0", "e1", "e2", "e3"]);

    let (_, s) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(s["status"], "done");
    assert_eq!(s["main_path"], json!([0, 1, 2, 3, 4]));
    let (status, p) = call(&app, "POST", &format!("/sessions/{sid}/nodes/{leaf}/propose"), None).await;
    assert_eq!((status, p["message"].as_str()), (StatusCode::OK, Some("no further proposals")));

    let req = Request::get(format!("/sessions/{sid}/nodes/{leaf}/image")).body(Body::empty()).unwrap();
    let (status, png) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    let img = RasterImage::decode(&png).unwrap();
    assert_eq!(img.dims(), (96, 96));
    let req = Request::get(format!("/sessions/{sid}/nodes/{leaf}/mask")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::OK);
    let req = Request::get(format!("/sessions/{sid}/nodes/0/mask")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reload_after_restart_keeps_the_tree_hash() {
    let dir = tempfile::tempdir().unwrap();
    let sid;
    let hash;
    {
        let app = oracle_app(dir.path());
        sid = create(&app, grid_scene(6)).await;
        drive(&app, &sid, 0, 2).await;
        let (_, d) = call(
            &app,
            "POST",
            &format!("/sessions/{sid}/nodes/1/decision"),
            Some(json!({"decision": "forbid", "element": "e3"})),
        )
        .await;
        assert_eq!(d["decision"], "forbid");
        // A proposal left pending is not part of the persisted tree.
        call(&app, "POST", &format!("/sessions/{sid}/nodes/2/propose"), None).await;
        let (_, t) = call(&app, "GET", &format!("/sessions/{sid}/tree"), None).await;
        hash = t["tree_hash"].as_str().unwrap().to_string();
        assert_eq!(t["tree"]["nodes"].as_array().unwrap().len(), 4);
    }
    let session_dir = dir.path().join("sessions").join(&sid);
    assert_eq!(tree_hash(&load_tree(&session_dir).unwrap()), hash);
    let app = oracle_app(dir.path());
    let (status, t) = call(&app, "GET", &format!("/sessions/{sid}/tree"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t["tree_hash"], hash);
    // The restarted service carries on from the stored tree.
    let (_, removed) = drive(&app, &sid, 2, 10).await;
    assert_eq!(removed, ["e1", "e5", "e2", "e3"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_accepts_commit_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(3)).await;
    let (_, p) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    let body = json!({"decision": "accept", "proposal_id": p["proposal_id"]});
    let uri = format!("/sessions/{sid}/nodes/0/decision");
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let (app, uri) = (app.clone(), uri.clone());
            let body = if i % 2 == 0 { body.clone() } else { json!({"decision": "accept"}) };
            tokio::spawn(async move { call(&app, "POST", &uri, Some(body)).await.0 })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::OK).count(), 1, "{codes:?}");
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::CONFLICT).count(), 7, "{codes:?}");
    let (_, t) = call(&app, "GET", &format!("/sessions/{sid}/tree"), None).await;
    assert_eq!(t["tree"]["nodes"][0]["children"], json!([1]));
    assert_eq!(t["tree"]["nodes"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reads_do_not_change_state() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(3)).await;
    drive(&app, &sid, 0, 1).await;
    let tree_uri = format!("/sessions/{sid}/tree");
    let first = send(&app, Request::get(&tree_uri).body(Body::empty()).unwrap()).await;
    for uri in ["", "/tree", "/nodes/0/image", "/nodes/1/image", "/nodes/1/mask"] {
        for _ in 0..2 {
            let req = Request::get(format!("/sessions/{sid}{uri}")).body(Body::empty()).unwrap();
            assert_eq!(send(&app, req).await.0, StatusCode::OK);
        }
    }
    call(&app, "GET", "/sessions", None).await;
    let second = send(&app, Request::get(&tree_uri).body(Body::empty()).unwrap()).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn corrupt_images_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let endpoint = EndpointConfig { base_url: "http://127.0.0.1:9".into(), ..Default::default() };
    let app =
        app_at(dir.path(), BackendChoice::Remote { endpoint, prompts: PromptSet::builtin() }, Duration::from_secs(5));
    let good = RasterImage::filled(8, 8, [0.5; 3]).unwrap().encode_png();
    let mut truncated = good.clone();
    truncated.truncate(good.len() / 2);
    for bytes in [b"not a png at all".to_vec(), truncated] {
        let req = Request::post("/sessions").header(header::CONTENT_TYPE, "image/png").body(Body::from(bytes.clone()));
        let (status, body) = send(&app, req.unwrap()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&body));
        let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
        let (status, _) = call(&app, "POST", "/sessions", Some(json!({"image_base64": b64}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"image_base64": "%%%"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let req = Request::post("/sessions").header(header::CONTENT_TYPE, "image/png").body(Body::from(good));
    let (status, _) = send(&app, req.unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn bad_requests_map_to_client_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut scene = grid_scene(1);
    scene["elements"][0]["mask"] = json!({"png": "/etc/hostname"});
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"scene": scene}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) =
        call(&app, "POST", "/sessions", Some(json!({"scene": grid_scene(1), "config": {"level_order": []}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let good = RasterImage::filled(8, 8, [0.5; 3]).unwrap().encode_png();
    let b64 = base64::engine::general_purpose::STANDARD.encode(good);
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"image_base64": b64}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "oracle back-end cannot start from pixels");

    let sid = create(&app, grid_scene(2)).await;
    assert_eq!(call(&app, "GET", "/sessions/nope/tree", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", &format!("/sessions/{sid}/nodes/9/propose"), None).await.0, StatusCode::NOT_FOUND);
    let uri = format!("/sessions/{sid}/nodes/0/decision");
    assert_eq!(call(&app, "POST", &uri, Some(json!({"decision": "accept"}))).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "POST", &uri, Some(json!({"decision": "maybe"}))).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &uri, Some(json!({"decision": "force_remove", "element": "ghost"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stale_proposals_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(3)).await;
    let (_, p) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/nodes/0/decision"),
        Some(json!({"decision": "forbid", "element": "e2"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/nodes/0/decision"),
        Some(json!({"decision": "accept", "proposal_id": p["proposal_id"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    let (_, poll) = call(&app, "GET", p["poll"].as_str().unwrap(), None).await;
    assert_eq!(poll["stale"], true);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_proposals_answer_202_and_can_be_polled() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_at(dir.path(), BackendChoice::Oracle, Duration::ZERO);
    let sid = create(&app, grid_scene(2)).await;
    let (status, p) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    assert!(status == StatusCode::ACCEPTED || status == StatusCode::OK, "{status}");
    let poll = p["poll"].as_str().unwrap().to_string();
    let mut ready = Value::Null;
    for _ in 0..200 {
        let (_, v) = call(&app, "GET", &poll, None).await;
        if v["status"] == "ready" {
            ready = v;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(ready["element_id"], "e0");
    let req = Request::get(ready["image_url"].as_str().unwrap()).body(Body::empty()).unwrap();
    let (status, png) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    assert!(RasterImage::decode(&png).is_ok());
    // Proposing again returns the cached proposal.
    let (_, again) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    assert_eq!(again["proposal_id"], ready["proposal_id"]);
}

async fn export(app: &Router, sid: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", &format!("/sessions/{sid}/export"), Some(body)).await
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn export_frame_counts() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());

    let ten = create(&app, grid_scene(9)).await;
    drive(&app, &ten, 0, 30).await;
    let (status, e) = export(&app, &ten, json!({"repeat": 5, "total": 49})).await;
    assert_eq!(status, StatusCode::CREATED, "{e}");
    assert_eq!(e["frame_count"], 49);
    let sources: Vec<u64> = serde_json::from_value(e["manifest"]["sources"].clone()).unwrap();
    assert_eq!(sources.iter().filter(|&&s| s == 9).count(), 4);
    let req = Request::get(e["frames"][48].as_str().unwrap()).body(Body::empty()).unwrap();
    let (status, last) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    let req = Request::get(format!("/sessions/{ten}/nodes/9/image")).body(Body::empty()).unwrap();
    assert_eq!(last, send(&app, req).await.1);
    let req = Request::get(e["manifest_url"].as_str().unwrap()).body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::OK);

    let one = create(&app, grid_scene(2)).await;
    let (status, e) = export(&app, &one, json!({"repeat": 5, "total": 5})).await;
    assert_eq!((status, e["frame_count"].as_u64()), (StatusCode::CREATED, Some(5)));

    let three = create(&app, grid_scene(4)).await;
    drive(&app, &three, 0, 2).await;
    let (status, e) = export(&app, &three, json!({"repeat": 5, "total": 49})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{e}");
    assert_eq!(e["error"], "infeasible");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn forbidden_elements_are_never_proposed_on_the_branch() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(6)).await;
    let (_, b) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/nodes/0/decision"),
        Some(json!({"decision": "forbid", "element": "e0"})),
    )
    .await;
    let root = b["branch_root"].as_u64().unwrap() as usize;
    let (_, removed) = drive(&app, &sid, root, 20).await;
    assert!(!removed.contains(&"e0".to_string()), "{removed:?}");
    assert_eq!(removed.iter().collect::<BTreeSet<_>>().len(), 5);
    // Forbidding something already removed on the path conflicts.
    let (_, t) = call(&app, "GET", &format!("/sessions/{sid}/tree"), None).await;
    let leaf = t["tree"]["nodes"].as_array().unwrap().len() - 1;
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/nodes/{leaf}/decision"),
        Some(json!({"decision": "forbid", "element": "e1"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    // The main path was not extended by the branch.
    assert_eq!(t["tree"]["main_path"], json!([0]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn force_remove_branches_take_the_named_element_first() {
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let sid = create(&app, grid_scene(4)).await;
    let (status, b) = call(
        &app,
        "POST",
        &format!("/sessions/{sid}/nodes/0/decision"),
        Some(json!({"decision": "force_remove", "element": "e3"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{b}");
    let node = b["node"].as_u64().unwrap() as usize;
    assert_ne!(node, b["branch_root"].as_u64().unwrap() as usize);
    let (_, removed) = drive(&app, &sid, node, 10).await;
    assert_eq!(removed, ["e0", "e1", "e2"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unreachable_backend_reports_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    // Bind then drop a listener so the port is almost surely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint =
        EndpointConfig { base_url: format!("http://127.0.0.1:{port}"), timeout_secs: 5, ..Default::default() };
    let app =
        app_at(dir.path(), BackendChoice::Remote { endpoint, prompts: PromptSet::builtin() }, Duration::from_secs(30));
    let png = RasterImage::filled(16, 16, [0.3; 3]).unwrap().encode_png();
    let req = Request::post("/sessions").header(header::CONTENT_TYPE, "image/png").body(Body::from(png)).unwrap();
    let (status, body) = send(&app, req).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = serde_json::from_slice::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string();
    let (status, e) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{e}");
    assert_eq!(e["error"], "backend_unavailable");
    let (_, s) = call(&app, "GET", &format!("/sessions/{sid}"), None).await;
    assert_eq!(s["status"], "error");
    assert_eq!(s["nodes"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_twice_gives_two_sessions_and_oracle_previews_match_the_render() {
    use subtract_core::{composite_scene, remove_element_oracle, SceneSpec};
    let dir = tempfile::tempdir().unwrap();
    let app = oracle_app(dir.path());
    let a = create(&app, grid_scene(3)).await;
    let b = create(&app, grid_scene(3)).await;
    assert_ne!(a, b);
    let (_, t) = call(&app, "GET", &format!("/sessions/{a}/tree"), None).await;
    assert_eq!(t["tree"]["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(t["status"], "idle");

    let (_, p) = call(&app, "POST", &format!("/sessions/{a}/nodes/0/propose"), None).await;
    assert_eq!((p["element_id"].as_str(), p["outcome"].as_str()), (Some("e0"), Some("passed")));
    let (_, s) = call(&app, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(s["status"], "awaiting_decision");
    let req = Request::get(p["image_url"].as_str().unwrap()).body(Body::empty()).unwrap();
    let preview = RasterImage::decode(&send(&app, req).await.1).unwrap();
    let scene = SceneSpec::from_json(&grid_scene(3).to_string(), None).unwrap();
    let expected = composite_scene(&remove_element_oracle(&scene, "e0").unwrap()).unwrap();
    assert_eq!(preview, expected);
}

struct Unchanged;

impl subtract_core::planner::Editor for Unchanged {
    fn edit(
        &self,
        r: &subtract_core::planner::EditRequest<'_>,
    ) -> Result<RasterImage, subtract_core::planner::PlannerError> {
        Ok(r.image.clone())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn failed_candidates_are_skippable_but_not_acceptable() {
    let dir = tempfile::tempdir().unwrap();
    let backend = BackendChoice::Custom(std::sync::Arc::new(|cfg| {
        let mut b = subtract_core::engine::Backends::oracle(cfg);
        b.editor = std::sync::Arc::new(Unchanged);
        b
    }));
    let app = app_at(dir.path(), backend, Duration::from_secs(60));
    let sid = create(&app, grid_scene(2)).await;

    let (status, p) = call(&app, "POST", &format!("/sessions/{sid}/nodes/0/propose"), None).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    assert_eq!((p["passed"].as_bool(), p["outcome"].as_str()), (Some(false), Some("skipped_candidate")));
    assert_eq!(p["attempts"], 5);
    assert!(p.get("image_url").is_none_or(Value::is_null), "{p}");

    let pid = p["proposal_id"].clone();
    let uri = format!("/sessions/{sid}/nodes/0/decision");
    let (status, _) = call(&app, "POST", &uri, Some(json!({"decision": "accept", "proposal_id": pid}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, d) = call(&app, "POST", &uri, Some(json!({"decision": "skip", "proposal_id": pid}))).await;
    assert_eq!(status, StatusCode::OK, "{d}");

    let (leaf, removed) = drive(&app, &sid, 0, 10).await;
    assert_eq!((leaf, removed.len()), (0, 0));
    let tree = load_tree(&dir.path().join("sessions").join(&sid)).unwrap();
    assert_eq!(tree.nodes.len(), 1);
    assert_eq!(tree.root().skips.len(), 2);
    assert!(tree.root().skips.iter().all(|s| s.candidate_attempts == 5));
}
